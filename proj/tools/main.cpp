// Command-line front end. Every subcommand reads one flat config file,
// writes CSV artifacts plus a manifest into --out, and leaves error.json
// behind when a solver step fails. Exit codes: 0 success, 1 usage or config
// error, 2 solver failure or failed quantitative check, 3 violated
// standing hypothesis.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "linorbits/bifurcation.hpp"
#include "linorbits/config.hpp"
#include "linorbits/coupling.hpp"
#include "linorbits/csv.hpp"
#include "linorbits/error.hpp"
#include "linorbits/invariants.hpp"
#include "linorbits/model.hpp"

namespace {

using nlohmann::json;
using namespace linorbits;

constexpr const char* kVersion = "0.1.0";

struct Io {
  std::string config_path;
  std::string out_dir = "out";
  int nu_min = -1;  // < 0 keeps the config value
  int nu_max = -1;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::input, "cannot write '" + path.string() + "'");
  out << text;
}

void write_manifest(const Io& io, const std::string& command, const Config& cfg, double wall_ms) {
  json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["config_hash"] = fnv1a_hex(cfg.canonical());
  j["wall_ms"] = wall_ms;
  write_text(std::filesystem::path(io.out_dir) / "manifest.json", j.dump(2) + "\n");
}

void write_error(const Io& io, const std::string& code, const std::string& message) {
  json j;
  j["code"] = code;
  j["message"] = message;
  write_text(std::filesystem::path(io.out_dir) / "error.json", j.dump(2) + "\n");
}

void save_csv(const Io& io, const std::string& name,
              const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream ss;
  for (const auto& r : rows) csv_row(ss, r);
  const auto path = std::filesystem::path(io.out_dir) / name;
  write_text(path, ss.str());
  std::cout << "wrote " << path.string() << " (" << rows.size() - 1 << " rows)\n";
}

Vec model_params(const Config& cfg, const VectorFieldModel& m) {
  Vec p = m.default_params();
  const auto names = m.param_names();
  for (size_t i = 0; i < names.size(); ++i) {
    const std::string key = "model." + names[i];
    if (cfg.has(key)) p[static_cast<int>(i)] = cfg.num(key);
  }
  return p;
}

EtopProblem load_problem(const Config& cfg) {
  return EtopProblem(scenario_by_name(cfg.str("scenario")));
}

int nu_of(const Config& cfg, const char* key, int flag_val, int fallback) {
  if (flag_val >= 0) return flag_val;
  return cfg.integer(key, fallback);
}

int cmd_equilibrium(const Io& io, const Config& cfg) {
  cfg.validate({"model", "guess", "tol"}, {"model."});
  const auto m = make_model(cfg.str("model"));
  const Vec p = model_params(cfg, *m);
  const EquilibriumRecord eq =
      find_equilibrium(*m, cfg.vec("guess"), p, cfg.num("tol", 1e-10));
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"name", "value"});
  for (int i = 0; i < eq.x.size(); ++i) rows.push_back({"x" + std::to_string(i), csv_number(eq.x[i])});
  for (int i = 0; i < eq.eigenvalues.size(); ++i) {
    rows.push_back({"eig" + std::to_string(i) + "_re", csv_number(eq.eigenvalues[i].real())});
    rows.push_back({"eig" + std::to_string(i) + "_im", csv_number(eq.eigenvalues[i].imag())});
  }
  rows.push_back({"n_unstable", std::to_string(eq.n_unstable)});
  rows.push_back({"hyperbolic", eq.hyperbolic ? "1" : "0"});
  save_csv(io, "equilibrium.csv", rows);
  return 0;
}

int cmd_periodic(const Io& io, const Config& cfg) {
  cfg.validate({"model", "guess", "period", "tol"}, {"model."});
  const auto m = make_model(cfg.str("model"));
  const Vec p = model_params(cfg, *m);
  PeriodicOrbitOptions opt;
  opt.tol = cfg.num("tol", opt.tol);
  opt.integ.atol = 1e-12;
  opt.integ.rtol = 1e-10;
  const PeriodicOrbitRecord po =
      find_periodic_orbit(*m, cfg.vec("guess"), p, cfg.num("period"), opt);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"name", "value"});
  for (int i = 0; i < po.point.size(); ++i)
    rows.push_back({"x" + std::to_string(i), csv_number(po.point[i])});
  rows.push_back({"period", csv_number(po.period)});
  for (int i = 0; i < po.multipliers.size(); ++i) {
    rows.push_back({"mult" + std::to_string(i) + "_re", csv_number(po.multipliers[i].real())});
    rows.push_back({"mult" + std::to_string(i) + "_im", csv_number(po.multipliers[i].imag())});
  }
  rows.push_back({"saddle", po.saddle ? "1" : "0"});
  rows.push_back({"mu_s", csv_number(po.mu_s)});
  rows.push_back({"mu_u", csv_number(po.mu_u)});
  save_csv(io, "periodic.csv", rows);
  return 0;
}

int cmd_etop(const Io& io, const Config& cfg) {
  cfg.validate({"scenario", "lambda_a", "lambda_b", "u", "nu_min", "nu_max"});
  const EtopProblem pr = load_problem(cfg);
  const double la = cfg.num("lambda_a", pr.lambda_a_star());
  const double lb = cfg.num("lambda_b", pr.lambda_b_star());
  const Vec u = cfg.vec("u", Vec::Zero(pr.frame_in().du()));
  const int lo = nu_of(cfg, "nu_min", io.nu_min, 2);
  const int hi = nu_of(cfg, "nu_max", io.nu_max, 8);
  const auto sweep = coupled_sweep(pr, la, lb, u, lo, hi);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"nu", "gap_in", "gap_out", "gap_in_inf", "gap_out_inf", "bperp_plus",
                  "bperp_minus", "off_z", "c_residual", "fp_iterations"});
  for (const auto& r : sweep)
    rows.push_back({std::to_string(r.nu), csv_number(r.gap_in), csv_number(r.gap_out),
                    csv_number(r.gap_in_inf), csv_number(r.gap_out_inf),
                    csv_number(r.bperp_plus), csv_number(r.bperp_minus), csv_number(r.off_z),
                    csv_number(r.c_residual), std::to_string(r.fp_iterations)});
  save_csv(io, "sweep.csv", rows);
  return 0;
}

int cmd_homoclinic_seq(const Io& io, const Config& cfg) {
  cfg.validate({"scenario", "vary", "lambda_a", "lambda_b", "u", "nu_min", "nu_max", "tol",
                "gap_tol"});
  const EtopProblem pr = load_problem(cfg);
  const std::string vary = cfg.str("vary", "a");
  if (vary != "a" && vary != "b") fail(errc::input, "config key 'vary' must be 'a' or 'b'");
  HomoclinicOptions opt;
  opt.tol = cfg.num("tol", opt.tol);
  opt.gap_tol = cfg.num("gap_tol", opt.gap_tol);
  const double la = cfg.num("lambda_a", pr.lambda_a_star());
  const double lb = cfg.num("lambda_b", pr.lambda_b_star());
  const Vec u = cfg.vec("u", Vec::Zero(pr.frame_in().du()));
  const int lo = nu_of(cfg, "nu_min", io.nu_min, 4);
  const int hi = nu_of(cfg, "nu_max", io.nu_max, 10);
  const auto seq = homoclinic_sequence(pr, lo, hi, la, lb, u, vary == "b", opt);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"nu", "lambda_a", "lambda_b", "u", "residual", "iterations"});
  for (const auto& h : seq)
    rows.push_back({std::to_string(h.nu), csv_number(h.lambda_a), csv_number(h.lambda_b),
                    csv_number(h.u.size() ? h.u[0] : 0.0), csv_number(h.residual),
                    std::to_string(h.iterations)});
  save_csv(io, "sequence.csv", rows);
  return 0;
}

int cmd_snake(const Io& io, const Config& cfg) {
  cfg.validate({"scenario", "nu", "lambda_a", "lambda_b", "u", "a_lo", "a_hi", "b_lo", "b_hi",
                "vertex_dir_a", "vertex_dir_b", "h0", "h_max", "max_points"});
  const EtopProblem pr = load_problem(cfg);
  const int nu = cfg.integer("nu", 4);
  const double la = cfg.num("lambda_a", pr.lambda_a_star());
  const double lb = cfg.num("lambda_b", pr.lambda_b_star());
  const Vec u = cfg.vec("u", Vec::Zero(pr.frame_in().du()));
  const HomoclinicPoint start = solve_homoclinic(pr, nu, la, lb, u, false);
  CurveOptions opt;
  opt.a_lo = cfg.num("a_lo", opt.a_lo);
  opt.a_hi = cfg.num("a_hi", opt.a_hi);
  opt.b_lo = cfg.num("b_lo", opt.b_lo);
  opt.b_hi = cfg.num("b_hi", opt.b_hi);
  opt.vertex_dir_a = cfg.num("vertex_dir_a", opt.vertex_dir_a);
  opt.vertex_dir_b = cfg.num("vertex_dir_b", opt.vertex_dir_b);
  opt.h0 = cfg.num("h0", opt.h0);
  opt.h_max = cfg.num("h_max", opt.h_max);
  opt.max_points = cfg.integer("max_points", opt.max_points);
  const HomoclinicCurve curve = continue_homoclinic(pr, nu, start, opt);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"s", "lambda_a", "lambda_b", "u", "residual"});
  for (const auto& p : curve.points)
    rows.push_back({csv_number(p.s), csv_number(p.lambda_a), csv_number(p.lambda_b),
                    csv_number(p.u), csv_number(p.residual)});
  save_csv(io, "snake.csv", rows);
  std::vector<std::vector<std::string>> vrows;
  vrows.push_back({"index", "s", "lambda_a", "lambda_b", "u", "curvature"});
  for (const auto& v : curve.vertices)
    vrows.push_back({std::to_string(v.index), csv_number(v.s), csv_number(v.lambda_a),
                     csv_number(v.lambda_b), csv_number(v.u), csv_number(v.curvature)});
  save_csv(io, "vertices.csv", vrows);
  return 0;
}

int cmd_hypotheses(const Io& io, const Config& cfg) {
  cfg.validate({"scenario"});
  const EtopProblem pr = load_problem(cfg);
  const auto reports = problem_hypotheses(pr);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"name", "ok", "value", "note"});
  bool all_ok = true;
  for (const auto& r : reports) {
    rows.push_back({r.name, r.ok ? "1" : "0", csv_number(r.value), r.note});
    std::cout << (r.ok ? "[ok]       " : "[violated] ") << r.name << "  " << csv_number(r.value)
              << "  " << r.note << "\n";
    all_ok = all_ok && r.ok;
  }
  save_csv(io, "hypotheses.csv", rows);
  return all_ok ? 0 : 3;
}

struct CheckRow {
  std::string name;
  double measured, expected, tol;
  bool pass;
};

int finish_checks(const Io& io, const std::vector<CheckRow>& checks) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"name", "measured", "expected", "tol", "pass"});
  bool all = true;
  for (const auto& c : checks) {
    rows.push_back({c.name, csv_number(c.measured), csv_number(c.expected), csv_number(c.tol),
                    c.pass ? "1" : "0"});
    std::cout << (c.pass ? "[pass] " : "[fail] ") << c.name << "  measured " << csv_number(c.measured)
              << "  expected " << csv_number(c.expected) << "  tol " << csv_number(c.tol) << "\n";
    all = all && c.pass;
  }
  save_csv(io, "scaling.csv", rows);
  return all ? 0 : 2;
}

int cmd_verify_scaling(const Io& io, const Config& cfg) {
  cfg.validate({"check", "scenario", "lambda_a", "lambda_b", "nu_min", "nu_max", "rate_tol",
                "ratio_tol", "min_consecutive"});
  const std::string check = cfg.str("check");
  std::vector<CheckRow> out;

  if (check == "bperp-rates" || check == "entry-gap-decay") {
    const EtopProblem pr = load_problem(cfg);
    const double la = cfg.num("lambda_a", pr.lambda_a_star());
    const double lb = cfg.num("lambda_b", pr.lambda_b_star());
    const int lo = nu_of(cfg, "nu_min", io.nu_min, 3);
    const int hi = nu_of(cfg, "nu_max", io.nu_max, 9);
    const double rate_tol = cfg.num("rate_tol", 0.05);
    const auto sweep =
        coupled_sweep(pr, la, lb, Vec::Zero(pr.frame_in().du()), lo, hi);
    const PeriodicOrbitRecord& po = pr.center().po;
    std::vector<double> nu, lp, lm, lg;
    for (const auto& r : sweep) {
      nu.push_back(r.nu);
      if (r.bperp_plus > 0) lp.push_back(std::log(r.bperp_plus));
      if (r.bperp_minus > 0) lm.push_back(std::log(r.bperp_minus));
      const double d = std::abs(r.gap_in - r.gap_in_inf);
      if (d > 0) lg.push_back(std::log(d));
    }
    if (check == "bperp-rates") {
      const ScalingFit fp = fit_scaling(nu, lp);
      const ScalingFit fm = fit_scaling(nu, lm);
      const double eu = -std::log(po.mu_u), es = std::log(po.mu_s);
      out.push_back({"bperp_plus_rate", fp.slope, eu, rate_tol * std::abs(eu),
                     std::abs(fp.slope - eu) <= rate_tol * std::abs(eu)});
      out.push_back({"bperp_minus_rate", fm.slope, es, rate_tol * std::abs(es),
                     std::abs(fm.slope - es) <= rate_tol * std::abs(es)});
    } else {
      const ScalingFit fg = fit_scaling(nu, lg);
      const double eu = -std::log(po.mu_u);
      out.push_back({"entry_gap_rate", fg.slope, eu, rate_tol * std::abs(eu),
                     std::abs(fg.slope - eu) <= rate_tol * std::abs(eu)});
      const double sig = fg.intercept_err > 0 ? std::abs(fg.intercept) / fg.intercept_err : 1e300;
      out.push_back({"entry_gap_intercept_sig", sig, 10.0, 0.0, sig >= 10.0});
    }
    return finish_checks(io, out);
  }

  if (check == "cycle-ratios") {
    const EtopProblem pr = load_problem(cfg);
    const double lb = cfg.num("lambda_b", pr.lambda_b_star());
    const int lo = nu_of(cfg, "nu_min", io.nu_min, 6);
    const int hi = nu_of(cfg, "nu_max", io.nu_max, 13);
    const double ratio_tol = cfg.num("ratio_tol", 0.05);
    const int need = cfg.integer("min_consecutive", 5);
    const double mu_s = pr.center().po.mu_s;
    const double la_star = find_etop_cycle(pr, lb, pr.lambda_a_star(), pr.lambda_a_star() + 1e-5);
    const auto seq = homoclinic_sequence(pr, lo, hi, pr.lambda_a_star(), lb,
                                         Vec::Zero(pr.frame_in().du()), false);
    int streak = 0, best = 0;
    bool monotone = true;
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      const double d0 = seq[i].lambda_a - la_star, d1 = seq[i + 1].lambda_a - la_star;
      if (std::abs(d1) >= std::abs(d0)) monotone = false;
      const double ratio = d1 / d0;
      streak = std::abs(ratio - mu_s) <= ratio_tol * mu_s ? streak + 1 : 0;
      best = std::max(best, streak);
    }
    out.push_back({"ratio_streak", static_cast<double>(best), static_cast<double>(need), 0.0,
                   best >= need});
    out.push_back({"distance_monotone", monotone ? 1.0 : 0.0, 1.0, 0.0, monotone});
    return finish_checks(io, out);
  }

  fail(errc::input, "unknown check '" + check + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lin-orbit toolkit for equilibrium-to-periodic cycles"};
  app.require_subcommand(1);

  Io io;
  std::function<int(const Io&, const Config&)> run;
  auto add = [&](const std::string& name, const std::string& desc,
                 int (*fn)(const Io&, const Config&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", io.config_path, "flat key = value config file")->required();
    sub->add_option("--out", io.out_dir, "output directory (default: out)");
    sub->add_option("--nu-min", io.nu_min, "override the smallest crossing count");
    sub->add_option("--nu-max", io.nu_max, "override the largest crossing count");
    sub->callback([&run, fn] { run = fn; });
    return sub;
  };

  add("equilibrium", "solve one equilibrium and report its spectrum", cmd_equilibrium);
  add("periodic", "solve one periodic orbit and report its multipliers", cmd_periodic);
  add("etop", "evaluate the coupled jump functions over a crossing-count range", cmd_etop);
  add("homoclinic-seq", "solve the one-homoclinic branch over a crossing-count range",
      cmd_homoclinic_seq);
  add("snake", "continue one homoclinic curve in two parameters and report its vertices",
      cmd_snake);
  add("verify-scaling", "check measured rates against the predicted multiplier powers",
      cmd_verify_scaling);
  add("hypotheses", "evaluate the standing assumptions at the organizing center", cmd_hypotheses);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::error_code fs_ec;
  std::filesystem::create_directories(io.out_dir, fs_ec);
  if (fs_ec) {
    std::cerr << "error: cannot create output directory '" << io.out_dir << "'\n";
    return 1;
  }
  try {
    const Config cfg = Config::from_file(io.config_path);
    const int rc = run(io, cfg);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(io, app.get_subcommands().front()->get_name(), cfg, ms);
    return rc;
  } catch (const solver_error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    write_error(io, errc_name(e.code()), e.what());
    return e.code() == errc::input ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    write_error(io, "internal", e.what());
    return 2;
  }
}
