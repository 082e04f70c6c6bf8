#pragma once

// Umbrella header for the whole library.

#include "prtree/core.hpp"
#include "prtree/kernel.hpp"
#include "prtree/tree.hpp"
#include "prtree/ensemble.hpp"
#include "prtree/pbart.hpp"
#include "prtree/eval.hpp"
#include "prtree/io.hpp"
#include "prtree/cli.hpp"
