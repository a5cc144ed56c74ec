// tmxl: command-line front end. Every subcommand prints one JSON report on stdout and, with
// --out, writes it (plus maps, manifests and CSV plot data) into that directory.

#include "tmxl/deform.hpp"
#include "tmxl/fixtures.hpp"
#include "tmxl/moduli.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tmxl;

namespace {

struct RunConfig {
  int grid = 64;
  double tension_tol = 1e-8;
  double lambda_tol = 1e-6;
  double fd_step = 1e-3;
  double eps_unstable = 8.0;
  double eps_cap = 0.3;
  double h_max = 50.0;
  double separation_C = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

void require_positive(double v, const char* name) {
  if (!(v > 0)) throw Error(Errc::ConfigViolation, std::string(name) + " must be positive");
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  const Json j = read_json_file(path);
  try {
    c.grid = j.value("grid", c.grid);
    if (j.contains("tolerances")) {
      const Json& t = j.at("tolerances");
      c.tension_tol = t.value("tension_tol", c.tension_tol);
      c.lambda_tol = t.value("lambda_tol", c.lambda_tol);
      c.fd_step = t.value("fd_step", c.fd_step);
      c.eps_unstable = t.value("eps_unstable", c.eps_unstable);
      c.eps_cap = t.value("eps_cap", c.eps_cap);
      c.h_max = t.value("H_max", c.h_max);
      c.separation_C = t.value("separation_C", c.separation_C);
    }
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, path + ": " + e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  if (c.grid < 8) throw Error(Errc::ConfigViolation, "grid must be at least 8");
  require_positive(c.tension_tol, "tension_tol");
  require_positive(c.lambda_tol, "lambda_tol");
  require_positive(c.fd_step, "fd_step");
  require_positive(c.eps_unstable, "eps_unstable");
  require_positive(c.eps_cap, "eps_cap");
  require_positive(c.h_max, "H_max");
  require_positive(c.separation_C, "separation_C");
}

std::vector<double> parse_list(const std::string& text, std::size_t want, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(Errc::BadInput, std::string(what) + ": cannot read '" + item + "' as a number");
    }
  }
  if (want && v.size() != want) {
    std::ostringstream os;
    os << what << " needs " << want << " comma-separated values";
    throw Error(Errc::BadInput, os.str());
  }
  return v;
}

Complex parse_complex(const std::string& text, const char* what) {
  const auto v = parse_list(text, 2, what);
  return {v[0], v[1]};
}

Json vector_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

class Session {
 public:
  explicit Session(RunConfig cfg) : cfg_(std::move(cfg)) {}
  const RunConfig& cfg() const { return cfg_; }

  fs::path out_path(const std::string& name) const {
    if (cfg_.out.empty()) throw Error(Errc::BadInput, "--out is required to write " + name);
    fs::create_directories(cfg_.out);
    return fs::path(cfg_.out) / name;
  }

  void emit(const std::string& name, Json report) const {
    report["seed"] = cfg_.seed;
    if (!cfg_.out.empty()) write_json_file(out_path(name + ".json"), report);
    std::cout << dump_json(report) << "\n";
  }

  // Rows of comma-separated values with a header line.
  void csv(const std::string& name, const std::string& header, const std::vector<std::vector<double>>& rows) const {
    if (cfg_.out.empty()) return;
    std::ofstream f(out_path(name));
    f << header << "\n";
    char buf[32];
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", row[i]);
        f << (i ? "," : "") << buf;
      }
      f << "\n";
    }
  }

 private:
  RunConfig cfg_;
};

TransplantBases build_bases(const BubbleCollection& coll, int body_k, int sphere_k, const RunConfig& cfg) {
  TransplantBases b;
  SpectrumOptions so;
  so.lambda_tol_rel = cfg.lambda_tol;
  if (!coll.body_degenerate() && body_k > 0) b.body = unstable_basis(coll.body(), body_k, so);
  if (sphere_k > 0)
    for (const SphereMap& v : coll.spheres()) b.spheres.push_back(great_sphere_basis(v, sphere_k));
  return b;
}

TransplantOptions transplant_options(const RunConfig& cfg) {
  TransplantOptions o;
  o.eps_unstable = cfg.eps_unstable;
  o.fd_step = cfg.fd_step;
  return o;
}

Json index_json(const IndexReport& r) {
  return Json{{"index", r.index},       {"nullity", r.nullity}, {"total", r.total},
              {"positive", r.positive()}, {"lambda_tol", r.lambda_tol}, {"scale", r.scale},
              {"harmonic_residual", r.harmonic_residual}, {"dense", r.dense}, {"eigenvalues", r.eigenvalues}};
}

Json pack_json(const SurrogatePack& p) {
  return Json{{"k", p.k},         {"c0", p.c0}, {"m", vector_json(p.m)}, {"E_at_m", p.E_at_m},
              {"worst_lower", p.worst_lower}, {"worst_upper", p.worst_upper}};
}

std::vector<std::vector<double>> energy_rows(const Sweepout& sw) {
  std::vector<std::vector<double>> rows;
  for (const SweepSample& s : sw.samples()) rows.push_back({s.t, energy(s.map), area(s.map)});
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tmxl: harmonic maps on flat tori, bubble certification and sweepout deformation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, map_path, sweep_path, coll_path, out_dir;
  int threads = 0;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "run configuration JSON");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads (default: TMXL_THREADS, then all cores)");
  app.add_option("--seed", seed, "seed recorded in every report");
  auto map_opt = [&](CLI::App* s) { return s->add_option("--map", map_path, "map file")->required(); };
  auto coll_opt = [&](CLI::App* s) { return s->add_option("--collection", coll_path, "collection JSON")->required(); };

  std::string tau_text, center_text, s0_text, name = "clifford", variant = "constant_bubble", of = "great_circle";
  double radius = 0.1, eps = 0.05, flow_T = -1;
  int rounds = 1, level = 1, body_k = 0, sphere_k = 1, count = 21, n = 0;
  std::vector<std::string> sweeps;

  auto* reduce_cmd = app.add_subcommand("reduce-tau", "reduce a mark into the fundamental domain");
  reduce_cmd->add_option("--tau", tau_text, "Re,Im")->required();
  auto* energy_cmd = app.add_subcommand("energy", "Dirichlet energy of a map");
  map_opt(energy_cmd);
  auto* area_cmd = app.add_subcommand("area", "area of a map");
  map_opt(area_cmd);
  auto* solve_cmd = app.add_subcommand("solve", "harmonic map by projected gradient descent");
  map_opt(solve_cmd);
  auto* replace_cmd = app.add_subcommand("replace", "harmonic replacement on one ball");
  map_opt(replace_cmd);
  replace_cmd->add_option("--center", center_text, "x,y")->required();
  replace_cmd->add_option("--radius", radius);
  auto* index_cmd = app.add_subcommand("index", "Morse index and nullity");
  map_opt(index_cmd);
  auto* dist_cmd = app.add_subcommand("bubble-dist", "bubble defect against a collection");
  map_opt(dist_cmd);
  coll_opt(dist_cmd);
  auto* transplant_cmd = app.add_subcommand("transplant", "transplanted unstable fields and concavity checks");
  map_opt(transplant_cmd);
  coll_opt(transplant_cmd);
  auto* flow_cmd = app.add_subcommand("flow", "ball flow on the transplanted surrogate");
  map_opt(flow_cmd);
  coll_opt(flow_cmd);
  flow_cmd->add_option("--s0", s0_text, "start point, comma separated")->required();
  flow_cmd->add_option("--time", flow_T, "flow time (default: doubling search for a c0/10 drop)");
  for (auto* s : {transplant_cmd, flow_cmd}) {
    s->add_option("--body-index", body_k, "unstable fields along the body");
    s->add_option("--sphere-index", sphere_k, "unstable fields per sphere");
  }
  auto* tighten_cmd = app.add_subcommand("tighten", "harmonic replacement rounds on a sweepout");
  tighten_cmd->add_option("--sweepout", sweep_path)->required();
  tighten_cmd->add_option("--rounds", rounds);
  auto* width_cmd = app.add_subcommand("width", "min-max width estimate over sweepouts");
  width_cmd->add_option("--sweepout", sweeps)->required();
  auto* deform_cmd = app.add_subcommand("deform", "push a sweepout off a high-index collection");
  deform_cmd->add_option("--sweepout", sweep_path)->required();
  coll_opt(deform_cmd);
  deform_cmd->add_option("--eps", eps);
  deform_cmd->add_option("--level", level);
  deform_cmd->add_option("--body-index", body_k);
  deform_cmd->add_option("--sphere-index", sphere_k);
  auto* fixture_cmd = app.add_subcommand("make-fixture", "write a named fixture");
  fixture_cmd->add_option("--name", name, "clifford, great_circle, glued_body_bubble, linear_sweepout")->required();
  fixture_cmd->add_option("--n", n, "grid (default: config grid)");
  fixture_cmd->add_option("--variant", variant, "glued scenario");
  fixture_cmd->add_option("--of", of, "sweepout middle map: clifford or great_circle");
  fixture_cmd->add_option("--count", count, "sweepout samples");

  auto fail = [](Errc code, const std::string& detail) {
    std::cout << dump_json(Json{{"error", errc_name(code)}, {"detail", detail}}) << "\n";
    return is_numerical(code) ? 3 : 2;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(Errc::BadInput, e.what());
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (app.count("--seed")) cfg.seed = seed;
    validate(cfg);
    if (threads < 0) throw Error(Errc::BadInput, "--threads must be positive");
    if (threads > 0) set_thread_count(threads);
    const Session io(cfg);

    if (*reduce_cmd) {
      const ReducedMark r = reduce(Mark(parse_complex(tau_text, "--tau")));
      io.emit("reduce-tau", Json{{"tau_reduced", {r.tau_reduced.real(), r.tau_reduced.imag()}},
                                 {"word", r.word},
                                 {"matrix", {r.matrix.a, r.matrix.b, r.matrix.c, r.matrix.d}},
                                 {"in_domain", in_fundamental_domain(r.tau_reduced)}});
    } else if (*energy_cmd || *area_cmd) {
      const TorusMap u = load_map(map_path);
      io.emit(*energy_cmd ? "energy" : "area",
              Json{{"energy", energy(u)}, {"area", area(u)}, {"grid", {u.na(), u.nb()}}});
    } else if (*solve_cmd) {
      SolveOptions so;
      so.tension_tol = cfg.tension_tol;
      const SolveResult r = solve_harmonic(load_map(map_path), so);
      if (!cfg.out.empty()) save_map(r.map, io.out_path("solved.json"));
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < r.energy_trace.size(); ++i) rows.push_back({static_cast<double>(i), r.energy_trace[i]});
      io.csv("solve_energy.csv", "step,energy", rows);
      io.emit("solve", Json{{"iterations", r.report.iterations},
                            {"final_tension_norm", r.report.final_tension_norm},
                            {"final_energy", r.report.final_energy},
                            {"converged", r.report.converged}});
    } else if (*replace_cmd) {
      const TorusMap u = load_map(map_path);
      ReplaceOptions ro;
      ro.energy_cap = cfg.eps_cap;
      const std::vector<Ball> balls{{parse_complex(center_text, "--center"), radius}};
      const ReplaceResult r = harmonic_replace(u, balls, ro);
      if (!cfg.out.empty()) save_map(r.map, io.out_path("replaced.json"));
      Json diag = Json::array();
      for (const BallDiagnostic& d : r.diagnostics)
        diag.push_back({{"energy", d.energy}, {"gradient_sq_at_center", d.gradient_sq_at_center}, {"bound", d.bound}});
      io.emit("replace", Json{{"energy_before", energy(u)}, {"energy_after", energy(r.map)}, {"diagnostics", diag}});
    } else if (*index_cmd) {
      SpectrumOptions so;
      so.lambda_tol_rel = cfg.lambda_tol;
      const IndexReport r = morse_index(load_map(map_path), so);
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) rows.push_back({static_cast<double>(i), r.eigenvalues[i]});
      io.csv("index_spectrum.csv", "k,eigenvalue", rows);
      io.emit("index", index_json(r));
    } else if (*dist_cmd) {
      const TorusMap u = load_map(map_path);
      const BubbleCollection coll = load_collection(coll_path);
      const BubbleConfig c = find_config(u, coll);
      const DefectReport d = defect_report(u, coll, c);
      io.emit("bubble-dist", Json{{"defect", d.defect},
                                  {"mark", d.mark},
                                  {"body", d.body},
                                  {"bubbles", d.bubbles},
                                  {"neck", d.neck},
                                  {"config", config_to_json(c)}});
    } else if (*transplant_cmd || *flow_cmd) {
      const TorusMap u = load_map(map_path);
      const BubbleCollection coll = load_collection(coll_path);
      const BubbleConfig c = find_config(u, coll);
      const SurrogatePack pack = transplant(u, coll, c, build_bases(coll, body_k, sphere_k, cfg), transplant_options(cfg));
      if (*transplant_cmd) {
        io.emit("transplant", pack_json(pack));
      } else {
        const auto s0 = parse_list(s0_text, static_cast<std::size_t>(pack.k), "--s0");
        const double E0 = energy(u);
        FlowTrace tr;
        double T = flow_T;
        if (T < 0) {
          DecreaseResult r = decrease_time(flow_field(pack), s0, E0 - pack.c0 / 10);
          T = r.T;
          tr = std::move(r.trace);
        } else {
          tr = ball_flow(pack, s0, T);
        }
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < tr.times.size(); ++i) {
          std::vector<double> row{tr.times[i], tr.energies[i]};
          row.insert(row.end(), tr.states[i].data(), tr.states[i].data() + tr.states[i].size());
          rows.push_back(std::move(row));
        }
        io.csv("flow_trace.csv", "x,energy,s...", rows);
        io.emit("flow", Json{{"T", T},
                             {"E0", E0},
                             {"energy_start", tr.energies.front()},
                             {"energy_end", tr.energies.back()},
                             {"terminal", vector_json(tr.terminal)},
                             {"steps", tr.times.size() - 1},
                             {"pack", pack_json(pack)}});
      }
    } else if (*tighten_cmd) {
      const Sweepout sw = load_sweepout(sweep_path);
      TightenOptions to;
      to.replace.energy_cap = cfg.eps_cap;
      const TightenResult r = tighten(sw, rounds, to);
      if (!cfg.out.empty()) save_sweepout(r.sweepout, io.out_path("tightened.json"));
      io.csv("tighten_energy.csv", "t,energy,area", energy_rows(r.sweepout));
      io.emit("tighten", Json{{"round_max_energy", r.round_max_energy}});
    } else if (*width_cmd) {
      std::vector<Sweepout> list;
      for (const std::string& p : sweeps) list.push_back(load_sweepout(p));
      io.emit("width", Json{{"width", width_estimate(list)}, {"sweepouts", list.size()}});
    } else if (*deform_cmd) {
      const Sweepout sw = load_sweepout(sweep_path);
      const BubbleCollection coll = load_collection(coll_path);
      DeformOptions dopts;
      dopts.separation_C = cfg.separation_C;
      dopts.transplant = transplant_options(cfg);
      const DeformResult r = deform_sweepout(sw, coll, build_bases(coll, body_k, sphere_k, cfg), eps, level, dopts);
      if (!cfg.out.empty()) save_sweepout(r.sweepout, io.out_path("deformed.json"));
      io.csv("deform_energy.csv", "t,energy,area", energy_rows(r.sweepout));
      io.emit("deform", deform_report_to_json(r.report));
    } else if (*fixture_cmd) {
      const int grid = n > 0 ? n : cfg.grid;
      if (grid < 8) throw Error(Errc::ConfigViolation, "grid must be at least 8");
      auto middle = [&](const std::string& which) {
        if (which == "clifford") return clifford_fixture(grid);
        if (which == "great_circle") return great_circle_fixture(grid);
        throw Error(Errc::UnknownFixture, "unknown map fixture " + which);
      };
      Json report{{"name", name}, {"grid", grid}};
      if (name == "clifford" || name == "great_circle") {
        const TorusMap u = middle(name);
        save_map(u, io.out_path(name + ".json"));
        save_collection(BubbleCollection::with_body(u, {}), io.out_path(name + "_collection.json"));
        report["energy"] = energy(u);
        report["tension_norm"] = tension(u).sup_norm();
      } else if (name == "glued_body_bubble") {
        const GluedFixture fx = glued_fixture(variant, grid);
        save_map(fx.map, io.out_path(variant + ".json"));
        save_collection(fx.collection, io.out_path(variant + "_collection.json"));
        write_json_file(io.out_path(variant + "_config.json"), config_to_json(fx.config));
        report["variant"] = variant;
        report["energy"] = energy(fx.map);
      } else if (name == "linear_sweepout") {
        Point e4 = Point::Zero(4);
        e4(3) = 1;
        const Sweepout sw = linear_sweepout(middle(of), count, e4);
        save_sweepout(sw, io.out_path(of + "_sweepout.json"));
        report["of"] = of;
        report["max_energy"] = sw.max_energy();
      } else {
        throw Error(Errc::UnknownFixture, "unknown fixture " + name);
      }
      io.emit("make-fixture", report);
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const Json::exception& e) {
    return fail(Errc::BadInput, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(Errc::BadInput, e.what());
  }
  return 0;
}
