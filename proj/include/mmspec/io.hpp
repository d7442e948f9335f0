#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "mmspec/common.hpp"
#include "mmspec/convergence.hpp"
#include "mmspec/energy.hpp"
#include "mmspec/space.hpp"
#include "mmspec/sphere.hpp"
#include "mmspec/transport.hpp"

namespace mmspec {

using json = nlohmann::json;

inline json space_to_json(const DiscreteSpace& sp, bool ambient_dist = false) {
  json points = json::array();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    json coord = json::array();
    for (Eigen::Index d = 0; d < sp.coord(i).size(); ++d) coord.push_back(sp.coord(i)[d]);
    points.push_back({{"id", sp.ids()[i]}, {"coord", coord}});
  }
  json j{{"points", points}};
  if (ambient_dist) {
    j["dist"] = "ambient";
  } else {
    json dist = json::array();
    for (std::size_t i = 0; i < sp.size(); ++i) {
      json row = json::array();
      for (std::size_t k = 0; k < sp.size(); ++k) row.push_back(sp.dist(i, k));
      dist.push_back(row);
    }
    j["dist"] = dist;
  }
  json measure = json::array();
  for (Eigen::Index i = 0; i < sp.measure().size(); ++i) measure.push_back(sp.measure()[i]);
  j["measure"] = measure;
  return j;
}

inline SpacePtr space_from_json(const json& j) {
  require(j.contains("points") && j.contains("dist") && j.contains("measure"),
          ErrorCode::IoError, "space file needs points, dist and measure");
  RawSpace raw;
  for (const auto& p : j.at("points")) {
    raw.ids.push_back(p.at("id").get<std::string>());
    const auto& cj = p.at("coord");
    Vec c(cj.size());
    for (std::size_t d = 0; d < cj.size(); ++d) c[static_cast<Eigen::Index>(d)] = cj[d].get<double>();
    raw.coords.push_back(std::move(c));
  }
  const std::size_t n = raw.ids.size();
  raw.measure = Vec(n);
  const auto& mj = j.at("measure");
  require(mj.size() == n, ErrorCode::IoError, "measure length mismatch");
  for (std::size_t i = 0; i < n; ++i) raw.measure[static_cast<Eigen::Index>(i)] = mj[i].get<double>();
  if (!(j.at("dist").is_string() && j.at("dist").get<std::string>() == "ambient")) {
    const auto& dj = j.at("dist");
    require(dj.size() == n, ErrorCode::IoError, "distance matrix shape mismatch");
    raw.dist = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      require(dj[i].size() == n, ErrorCode::IoError, "distance matrix shape mismatch");
      for (std::size_t k = 0; k < n; ++k) raw.dist(i, k) = dj[i][k].get<double>();
    }
  }
  return make_space(std::move(raw));
}

inline json energy_to_json(const EnergyForm& E) {
  const DiscreteSpace& sp = E.space();
  json j;
  json edges = json::array();
  if (E.is_quadratic()) {
    j["kind"] = "quadratic";
    j["q"] = 2.0;
    for (const auto& e : E.quadratic().edges)
      edges.push_back({sp.ids()[e.a], sp.ids()[e.b], e.w});
  } else {
    j["kind"] = "lq";
    if (E.lq().q == kLqInfinity)
      j["q"] = "inf";
    else
      j["q"] = E.lq().q;
    // Emit each symmetric pair once; the loader restores both directions.
    for (std::size_t x = 0; x < E.lq().neighbors.size(); ++x)
      for (const auto& nb : E.lq().neighbors[x])
        if (x < nb.y) edges.push_back({sp.ids()[x], sp.ids()[nb.y], nb.w});
  }
  j["edges"] = edges;
  return j;
}

inline EnergyForm energy_from_json(const json& j, SpacePtr space) {
  require(j.contains("kind") && j.contains("edges"), ErrorCode::IoError,
          "energy file needs kind and edges");
  auto point = [&](const json& v) -> std::size_t {
    if (v.is_string()) return space->index_of(v.get<std::string>());
    return v.get<std::size_t>();
  };
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "quadratic") {
    QuadraticKind k;
    for (const auto& e : j.at("edges"))
      k.edges.push_back({point(e[0]), point(e[1]), e[2].get<double>()});
    return EnergyForm(std::move(space), std::move(k));
  }
  require(kind == "lq", ErrorCode::IoError, "unknown energy kind '" + kind + "'");
  LqKind k;
  if (j.contains("q") && j.at("q").is_string()) {
    require(j.at("q").get<std::string>() == "inf", ErrorCode::IoError, "q must be a number or 'inf'");
    k.q = kLqInfinity;
  } else {
    k.q = j.value("q", 2.0);
  }
  k.neighbors.resize(space->size());
  for (const auto& e : j.at("edges")) {
    std::size_t a = point(e[0]), b = point(e[1]);
    double w = e[2].get<double>();
    k.neighbors[a].push_back({b, w});
    k.neighbors[b].push_back({a, w});
  }
  return EnergyForm(std::move(space), std::move(k));
}

inline json eigenpair_to_json(const EigenPair& p, int starts_used) {
  json u = json::array();
  for (Eigen::Index i = 0; i < p.u.size(); ++i) u.push_back(p.u[i]);
  return json{{"lambda", p.lambda},
              {"residual", p.residual},
              {"u", u},
              {"starts_used", starts_used},
              {"converged", p.converged}};
}

inline json plan_to_json(const CouplingPlan& plan) {
  json triplets = json::array();
  for (const auto& e : plan.entries) triplets.push_back({e.src, e.dst, e.mass});
  return json{{"plan", triplets},
              {"cost", plan.cost},
              {"dual_residual", plan.dual_residual},
              {"slack", plan.slack}};
}

inline json continuity_to_json(const ContinuityReport& rep, std::uint64_t config_hash) {
  json per_k = json::array();
  for (std::size_t k = 0; k < rep.verdict_per_k.size(); ++k)
    per_k.push_back({{"k", k + 1}, {"pass", static_cast<bool>(rep.verdict_per_k[k])}});
  json w2 = json::array();
  for (double v : rep.w2) w2.push_back(v);
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx", static_cast<unsigned long long>(config_hash));
  return json{{"config_hash", hash_buf},
              {"threshold", rep.threshold},
              {"verdict", rep.verdict},
              {"per_k", per_k},
              {"w2_to_limit", w2},
              {"w2_nonincreasing", rep.w2_nonincreasing}};
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorCode::IoError, "cannot open '" + path + "' for writing");
  os << content;
  require(os.good(), ErrorCode::IoError, "write to '" + path + "' failed");
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::IoError, std::string("bad JSON in '") + path + "': " + e.what());
  }
  return j;
}

}  // namespace mmspec
