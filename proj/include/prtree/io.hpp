#pragma once

#include "prtree/ensemble.hpp"
#include "prtree/eval.hpp"
#include "prtree/pbart.hpp"
#include "prtree/tree.hpp"

#include <json.hpp>  // vendored nlohmann/json single header

#include <fstream>
#include <string>
#include <vector>

namespace prtree {

using json = nlohmann::json;

namespace detail {

// JSON has no infinities, so unbounded region sides are written as strings.
inline json bound_to_json(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  return v;
}

inline double bound_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw ValidationError("unexpected bound '" + s + "'");
  }
  return j.get<double>();
}

inline json bounds_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(bound_to_json(x));
  return a;
}

inline std::vector<double> bounds_from_json(const json& a) {
  std::vector<double> out;
  for (const auto& x : a) out.push_back(bound_from_json(x));
  return out;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& a) {
  const auto v = a.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("model JSON is missing field '") + key + "'");
  return j.at(key);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trees

inline json to_json(const PRTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) {
      const auto& r = t.leaf_regions[static_cast<std::size_t>(n.leaf)];
      nodes.push_back({{"kind", "leaf"},
                       {"leaf", n.leaf},
                       {"gamma", t.gamma(n.leaf)},
                       {"lower", detail::bounds_to_json(r.lower_bounds())},
                       {"upper", detail::bounds_to_json(r.upper_bounds())}});
    } else {
      nodes.push_back({{"kind", "split"}, {"j", n.feature}, {"s", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
  }
  json out = {{"sigma", t.sigma.values}, {"nodes", nodes}};
  if (!t.sse_trace.empty()) out["sse_trace"] = t.sse_trace;
  return out;
}

inline PRTree tree_from_json(const json& j) {
  PRTree t;
  t.sigma = SigmaVector(detail::field(j, "sigma").get<std::vector<double>>());
  const json& nodes = detail::field(j, "nodes");
  if (!nodes.is_array() || nodes.empty()) throw ValidationError("tree JSON has no nodes");

  std::size_t leaves = 0;
  for (const auto& n : nodes)
    if (detail::field(n, "kind") == "leaf") ++leaves;
  t.leaf_regions.resize(leaves);
  t.gamma.resize(static_cast<Eigen::Index>(leaves));
  std::vector<char> seen(leaves, 0);
  std::size_t next_leaf = 0;
  for (const auto& n : nodes) {
    TreeNode tn;
    if (detail::field(n, "kind") == "leaf") {
      tn.leaf = n.contains("leaf") ? n.at("leaf").get<int>() : static_cast<int>(next_leaf);
      ++next_leaf;
      if (tn.leaf < 0 || static_cast<std::size_t>(tn.leaf) >= leaves || seen[static_cast<std::size_t>(tn.leaf)])
        throw ValidationError("tree JSON has an invalid leaf index");
      seen[static_cast<std::size_t>(tn.leaf)] = 1;
      t.leaf_regions[static_cast<std::size_t>(tn.leaf)] =
          Region(detail::bounds_from_json(detail::field(n, "lower")), detail::bounds_from_json(detail::field(n, "upper")));
      t.gamma(tn.leaf) = detail::field(n, "gamma").get<double>();
    } else {
      tn.feature = detail::field(n, "j").get<int>();
      tn.threshold = detail::field(n, "s").get<double>();
      tn.left = detail::field(n, "left").get<int>();
      tn.right = detail::field(n, "right").get<int>();
      const auto count = static_cast<int>(nodes.size());
      if (tn.left < 0 || tn.left >= count || tn.right < 0 || tn.right >= count)
        throw ValidationError("tree JSON has an out-of-range child index");
    }
    t.nodes.push_back(tn);
  }
  // depths follow from the structure
  for (std::size_t i = 0; i < t.nodes.size(); ++i)
    if (!t.nodes[i].is_leaf()) {
      t.nodes[static_cast<std::size_t>(t.nodes[i].left)].depth = t.nodes[i].depth + 1;
      t.nodes[static_cast<std::size_t>(t.nodes[i].right)].depth = t.nodes[i].depth + 1;
    }
  for (const auto& r : t.leaf_regions)
    if (r.dim() != t.sigma.size()) throw ValidationError("leaf region dimension does not match sigma");
  if (j.contains("sse_trace")) t.sse_trace = j.at("sse_trace").get<std::vector<double>>();
  return t;
}

// ---------------------------------------------------------------------------
// Ensembles

inline json to_json(const Forest& f) {
  json trees = json::array();
  for (const auto& t : f.trees) trees.push_back(to_json(t));
  return {{"kind", "forest"},
          {"sigma", f.sigma.values},
          {"bootstrap", f.bootstrap},
          {"feature_subsample", f.feature_subsample},
          {"trees", trees}};
}

inline json to_json(const BoostedEnsemble& b) {
  json trees = json::array();
  for (const auto& t : b.trees) trees.push_back(to_json(t));
  return {{"kind", "gbt"}, {"shrinkage", b.shrinkage}, {"rmse_trace", b.rmse_trace}, {"trees", trees}};
}

inline Forest forest_from_json(const json& j) {
  Forest f;
  for (const auto& t : detail::field(j, "trees")) f.trees.push_back(tree_from_json(t));
  if (f.trees.empty()) throw ValidationError("forest JSON has no trees");
  f.sigma = j.contains("sigma") ? SigmaVector(j.at("sigma").get<std::vector<double>>()) : f.trees.front().sigma;
  f.bootstrap = j.value("bootstrap", true);
  if (j.contains("feature_subsample"))
    f.feature_subsample = j.at("feature_subsample").get<std::vector<std::vector<std::size_t>>>();
  return f;
}

inline BoostedEnsemble boosted_from_json(const json& j) {
  BoostedEnsemble b;
  b.shrinkage = j.value("shrinkage", 1.0);
  for (const auto& t : detail::field(j, "trees")) b.trees.push_back(tree_from_json(t));
  if (b.trees.empty()) throw ValidationError("boosted JSON has no trees");
  if (j.contains("rmse_trace")) b.rmse_trace = j.at("rmse_trace").get<std::vector<double>>();
  return b;
}

// ---------------------------------------------------------------------------
// P-BART chains

inline json to_json(const PBartHyper& h) {
  json out = {{"m", h.m},
              {"alpha", h.alpha},
              {"beta", h.beta},
              {"nu", h.nu},
              {"it_burn", h.it_burn},
              {"it_max", h.it_max},
              {"move_probs", {h.move_probs.grow, h.move_probs.prune, h.move_probs.change, h.move_probs.swap}},
              {"min_leaf_fraction", h.rule.min_leaf_fraction},
              {"tree_moves", h.tree_moves}};
  if (h.lambda) out["lambda"] = *h.lambda;
  if (h.sigma_gamma) out["sigma_gamma"] = *h.sigma_gamma;
  if (h.rule.max_depth) out["max_depth"] = *h.rule.max_depth;
  if (h.fixed_sigma_tilde) out["fixed_sigma_tilde"] = *h.fixed_sigma_tilde;
  return out;
}

inline PBartHyper hyper_from_json(const json& j) {
  PBartHyper h;
  h.m = j.value("m", h.m);
  h.alpha = j.value("alpha", h.alpha);
  h.beta = j.value("beta", h.beta);
  h.nu = j.value("nu", h.nu);
  h.it_burn = j.value("it_burn", h.it_burn);
  h.it_max = j.value("it_max", h.it_max);
  if (j.contains("move_probs")) {
    const auto q = j.at("move_probs").get<std::vector<double>>();
    if (q.size() != 4) throw ValidationError("move_probs needs 4 entries");
    h.move_probs = {q[0], q[1], q[2], q[3]};
  }
  h.rule.min_leaf_fraction = j.value("min_leaf_fraction", h.rule.min_leaf_fraction);
  h.tree_moves = j.value("tree_moves", true);
  if (j.contains("lambda")) h.lambda = j.at("lambda").get<double>();
  if (j.contains("sigma_gamma")) h.sigma_gamma = j.at("sigma_gamma").get<double>();
  if (j.contains("max_depth")) h.rule.max_depth = j.at("max_depth").get<int>();
  if (j.contains("fixed_sigma_tilde")) h.fixed_sigma_tilde = j.at("fixed_sigma_tilde").get<double>();
  return h;
}

inline json to_json(const PBartChain& c) {
  json snaps = json::array();
  for (const auto& s : c.snapshots) {
    json trees = json::array();
    for (const auto& t : s) trees.push_back(to_json(t));
    snaps.push_back(std::move(trees));
  }
  json acc = json::object();
  for (std::size_t k = 0; k < c.acceptance_log.size(); ++k)
    acc[move_name(static_cast<MoveKind>(k))] = {{"proposed", c.acceptance_log[k].proposed},
                                                {"accepted", c.acceptance_log[k].accepted}};
  return {{"kind", "pbart"},
          {"hyper", to_json(c.hyper)},
          {"sigma", c.sigma.values},
          {"y_min", c.y_min},
          {"y_range", c.y_range},
          {"sigma_trace", c.sigma_trace},
          {"acceptance_trace", c.acceptance_trace},
          {"acceptance", acc},
          {"snapshots", snaps}};
}

inline PBartChain chain_from_json(const json& j) {
  PBartChain c;
  c.hyper = hyper_from_json(detail::field(j, "hyper"));
  c.sigma = SigmaVector(detail::field(j, "sigma").get<std::vector<double>>());
  c.y_min = detail::field(j, "y_min").get<double>();
  c.y_range = detail::field(j, "y_range").get<double>();
  c.sigma_trace = j.value("sigma_trace", std::vector<double>{});
  c.acceptance_trace = j.value("acceptance_trace", std::vector<double>{});
  if (j.contains("acceptance"))
    for (std::size_t k = 0; k < c.acceptance_log.size(); ++k) {
      const char* name = move_name(static_cast<MoveKind>(k));
      if (j.at("acceptance").contains(name)) {
        c.acceptance_log[k].proposed = j.at("acceptance").at(name).at("proposed").get<std::size_t>();
        c.acceptance_log[k].accepted = j.at("acceptance").at(name).at("accepted").get<std::size_t>();
      }
    }
  for (const auto& s : detail::field(j, "snapshots")) {
    std::vector<PRTree> trees;
    for (const auto& t : s) trees.push_back(tree_from_json(t));
    c.snapshots.push_back(std::move(trees));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Scaler and complete model files

inline json to_json(const Scaler& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline Scaler scaler_from_json(const json& j) {
  Scaler s{detail::field(j, "mean").get<std::vector<double>>(), detail::field(j, "std").get<std::vector<double>>()};
  if (s.mean.size() != s.std.size()) throw ValidationError("scaler mean and std differ in length");
  return s;
}

inline json to_json(const FittedModel& m) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PRTree>) {
          json j = to_json(x);
          j["kind"] = "tree";
          return j;
        } else {
          return to_json(x);
        }
      },
      m.model);
}

inline FittedModel model_from_json(const json& j) {
  const auto kind = detail::field(j, "kind").get<std::string>();
  if (kind == "tree") return {tree_from_json(j)};
  if (kind == "forest") return {forest_from_json(j)};
  if (kind == "gbt") return {boosted_from_json(j)};
  if (kind == "pbart") return {chain_from_json(j)};
  throw ValidationError("unknown model kind '" + kind + "' in model JSON");
}

/// A fitted model together with the preprocessing needed to apply it to raw rows.
struct ModelFile {
  std::string target;
  std::vector<std::string> feature_names;
  Scaler scaler;
  FittedModel model;

  Vector predict_raw(const Dataset& raw) const { return model.predict(scaler.apply(raw)); }
};

inline json to_json(const ModelFile& f) {
  return {{"format", "prtree-model"},
          {"version", 1},
          {"target", f.target},
          {"feature_names", f.feature_names},
          {"scaler", to_json(f.scaler)},
          {"model", to_json(f.model)}};
}

inline ModelFile model_file_from_json(const json& j) {
  if (j.value("format", std::string{}) != "prtree-model") throw ValidationError("not a prtree model file");
  ModelFile f;
  f.target = j.value("target", std::string{});
  f.feature_names = detail::field(j, "feature_names").get<std::vector<std::string>>();
  f.scaler = scaler_from_json(detail::field(j, "scaler"));
  f.model = model_from_json(detail::field(j, "model"));
  if (f.scaler.size() != f.feature_names.size()) throw ValidationError("scaler and feature names disagree");
  return f;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("invalid JSON in '" + path + "': " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file '" + path + "'");
  out << j.dump() << '\n';
}

}  // namespace prtree
