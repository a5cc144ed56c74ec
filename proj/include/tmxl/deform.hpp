#pragma once

#include "tmxl/bubbles.hpp"
#include "tmxl/solver.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace tmxl {

// A surrogate energy on the closed unit k-ball with its gradient.
struct FlowField {
  int k = 0;
  std::function<double(std::span<const double>)> energy;
  std::function<Eigen::VectorXd(std::span<const double>)> gradient;
};

FlowField flow_field(const SurrogatePack& pack, double h = 1e-4);

struct FlowOptions {
  double tol = 1e-10;          // local error per step (step doubling), absolute
  double initial_step = 1e-2;
  double max_step = 0.25;
  double min_step = 1e-12;     // StepUnderflow below this
  double stationary_tol = 1e-9;  // |(1 - |s|^2) grad E| treated as a rest point
};

struct FlowTrace {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<double> energies;  // non-increasing
  Eigen::VectorXd terminal;
};

// ds/dx = -(1 - |s|^2) grad E(s) by adaptive RK4 from s0 for x in [0, T].
FlowTrace ball_flow(const FlowField& f, std::span<const double> s0, double T, const FlowOptions& opts = {});
FlowTrace ball_flow(const SurrogatePack& pack, std::span<const double> s0, double T, const FlowOptions& opts = {});

struct DecreaseSearch {
  double T0 = 0.25;
  int max_doublings = 24;
};

struct DecreaseResult {
  double T = 0.0;
  FlowTrace trace;
};

// Smallest T = T0 2^j whose terminal energy lies below `target`; NonConvergence past max_doublings.
DecreaseResult decrease_time(const FlowField& f, std::span<const double> s0, double target,
                             const FlowOptions& opts = {}, const DecreaseSearch& search = {});

// Ball centres, body shift and Mobius entries blended linearly; the second config is read
// through the representatives nearest to the first. InterpolationGap when the shapes differ.
BubbleConfig interpolate_config(const LatticeGeometry& g, const BubbleConfig& a, const BubbleConfig& b, double lambda);

struct DeformPlan {
  std::vector<double> defects;  // per sample; +inf where no config was found
  std::vector<std::optional<BubbleConfig>> configs;  // set on the active samples
  std::vector<double> cutoff;   // 1 below eps / 2, 0 from eps on, linear in the defect between
  std::vector<std::size_t> active;  // defect < eps
  std::vector<std::size_t> core;    // defect < eps / 2
  // filled by deform_sweepout
  std::vector<Eigen::VectorXd> maximizers;  // m per active sample, empty elsewhere
  std::vector<Eigen::VectorXd> targets;     // H'(t, 1) per active sample, empty elsewhere
  double circle_radius = 0.0;
  double circle_phase = 0.0;
  double kappa = 0.0;
  double flow_time = 0.0;
};

// Per-sample configs and defects; adjacent active samples must share a midpoint config whose
// defect stays below eps on both maps, else InterpolationGap.
DeformPlan select_configs(const Sweepout& sw, const BubbleCollection& coll, double eps, const FindOptions& find = {});

struct DeformOptions {
  double separation_C = 1.0;
  FindOptions find;
  TransplantOptions transplant;
  FlowOptions flow;
  DecreaseSearch search;
};

struct DeformReport {
  double max_energy_before = 0.0;
  double max_energy_after = 0.0;
  double min_defect_after = 0.0;
  double flow_time = 0.0;
  double eps_bar_est = 0.0;  // min(C eps / 10, smallest defect among the fully flowed samples)
  double kappa = 0.0;
  std::vector<double> defects_after;
};

struct DeformResult {
  Sweepout sweepout;
  DeformPlan plan;
  DeformReport report;
};

int total_index(const TransplantBases& bases);

// IndexTooLow unless the bases carry at least two fields.
DeformResult deform_sweepout(const Sweepout& sw, const BubbleCollection& coll, const TransplantBases& bases, double eps,
                             int l, const DeformOptions& opts = {});

// Same t grid required (BadInput). False when endpoints differ; TubeEscape when the straight
// segment between matching nodes reaches the tube radius.
bool homotopy_check(const Sweepout& a, const Sweepout& b);

Json deform_report_to_json(const DeformReport& r);

}  // namespace tmxl
