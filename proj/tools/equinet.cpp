// SPDX-License-Identifier: Apache-2.0
// Command-line front end.  Exit codes: 0 ok, 1 input error, 2 non-convergence,
// 3 verification failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "equinet/equinet.hpp"

namespace fs = std::filesystem;
using namespace equinet;

namespace {

constexpr int exit_ok = 0, exit_input = 1, exit_convergence = 2, exit_verification = 3;

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_double(v[i]);
  return s;
}

SolverKind parse_solver(const std::string& s) {
  if (s == "fb") return SolverKind::ForwardBackward;
  if (s == "pr") return SolverKind::PeacemanRachford;
  throw InputError("unknown solver '" + s + "' (fb or pr)");
}

ParamBinding parse_param(const std::string& s) {
  if (s == "none") return {};
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw InputError("parameter must be r:EDGE, g:EDGE, u:INDEX or none");
  const std::string kind = s.substr(0, colon), idx = s.substr(colon + 1);
  std::size_t i = 0;
  auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), i);
  if (ec != std::errc{} || ptr != idx.data() + idx.size() || idx.empty())
    throw InputError("bad parameter index '" + idx + "'");
  if (kind == "r") return {ParamTarget::Resistance, 0, i};
  if (kind == "g") return {ParamTarget::Conductance, 0, i};
  if (kind == "u") return {ParamTarget::InputOffset, 0, i};
  throw InputError("unknown parameter kind '" + kind + "'");
}

struct SolveFlags {
  double alpha = 0.0;
  double tol = 1e-10;
  std::size_t max_iter = 100000;
  std::string solver = "fb";

  void attach(CLI::App* app) {
    app->add_option("--alpha", alpha, "Step size (0 picks one from H)");
    app->add_option("--tol", tol, "Fixed-point residual tolerance")->check(CLI::PositiveNumber);
    app->add_option("--max-iter", max_iter, "Iteration cap")->check(CLI::PositiveNumber);
    app->add_option("--solver", solver, "fb or pr")->check(CLI::IsMember({"fb", "pr"}));
  }
  SolverOptions options() const {
    SolverOptions o;
    o.alpha = alpha;
    o.tol = tol;
    o.max_iter = max_iter;
    return o;
  }
};

// ---- build ----

struct BuildArgs {
  std::size_t p = 2, q = 2;
  std::string layout = "equilibrium";
  std::string conductances;
  std::string form = "conductor";
  std::string diode = "ideal";
  std::uint64_t seed = 1;
  double g_min = 0.5, g_max = 2.0;
  std::string out;
};

int cmd_build(const BuildArgs& a) {
  const bool eq = a.layout == "equilibrium";
  Eigen::MatrixXd G;
  if (!a.conductances.empty()) {
    G = matrix_from_json(read_json_file(a.conductances), a.conductances);
  } else {
    if (a.p == 0 || a.q == 0) throw InputError("--p and --q must be positive");
    if (!(a.g_min > 0.0 && a.g_max >= a.g_min)) throw InputError("need 0 < g-min <= g-max");
    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<double> U(a.g_min, a.g_max);
    G.resize(static_cast<Eigen::Index>(a.p + (eq ? 1 : 0)), static_cast<Eigen::Index>(a.q + (eq ? 1 : 0)));
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = U(rng);
  }
  const ActivationKind d = a.diode == "shockley" ? ActivationKind{nonideal_diode()} : ActivationKind{IdealDiodeReverse{}};
  const ResistiveForm f = a.form == "resistor" ? ResistiveForm::Resistor : ResistiveForm::Conductor;
  const CircuitGraph g = eq ? build_crossbar_equilibrium(G, d, f) : build_crossbar_feedforward(G, d, f);
  const std::string text = netlist_to_json(g).dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text_file(a.out, text);
  return exit_ok;
}

// ---- export ----

int cmd_export(const std::string& netlist, bool kernel, const std::string& out) {
  const CircuitGraph g = read_netlist(netlist);
  json j;
  if (kernel) {
    const CircuitModel model(g);
    const auto& k = model.kernel();
    json inputs = json::array(), acts = json::array();
    for (auto q : k.inputs) inputs.push_back(to_string(q));
    for (const auto& a : k.activations) acts.push_back(activation_to_json(a));
    j = json{{"version", schema_version}, {"H", matrix_to_json(k.H)}, {"B", matrix_to_json(k.B)},
             {"C", matrix_to_json(k.C)},  {"D", matrix_to_json(k.D)}, {"inputs", inputs},
             {"activations", acts}};
  } else {
    j = netlist_to_json(g);
  }
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text_file(out, text);
  return exit_ok;
}

// ---- infer ----

int cmd_infer(const std::string& netlist, const std::string& input, const SolveFlags& sf, bool as_json) {
  const json doc = read_json_file(netlist);
  const json jin = read_json_file(input);
  const SolverKind kind = parse_solver(sf.solver);
  if (doc.contains("layers")) {
    const CascadeNetwork net = cascade_from_json(doc, netlist);
    const Eigen::VectorXd x = vector_from_json(jin, input);
    if (x.size() == 0) throw InputError(input + ": input vector is empty");
    if (static_cast<std::size_t>(x.size()) != net.input_dim)
      throw InputError(input + ": expected " + std::to_string(net.input_dim) + " entries");
    const auto st = cascade_forward(net, x, kind, sf.options());
    const Eigen::VectorXd y = st.output(net);
    if (as_json) {
      std::cout << json{{"y", vector_to_json(y)}, {"iterations", st.iterations}, {"converged", st.converged}}.dump(2)
                << "\n";
    } else {
      std::cout << "y: " << join(y) << "\n"
                << "converged: " << (st.converged ? "true" : "false") << "  iterations: " << st.iterations << "\n";
    }
    return st.converged ? exit_ok : exit_convergence;
  }
  const CircuitModel model(netlist_from_json(doc, netlist));
  const Eigen::VectorXd u = input_from_json(jin, model.kernel().inputs, input);
  const auto rep = solve(model.kernel(), u, kind, sf.options());
  if (as_json) {
    std::cout << json{{"y", vector_to_json(rep.y)},
                      {"z", vector_to_json(rep.z_star)},
                      {"iterations", rep.iterations},
                      {"residual", rep.residual},
                      {"converged", rep.converged},
                      {"alpha", rep.alpha}}
                     .dump(2)
              << "\n";
  } else {
    std::cout << "y: " << join(rep.y) << "\n"
              << "converged: " << (rep.converged ? "true" : "false") << "  iterations: " << rep.iterations
              << "  residual: " << format_double(rep.residual) << "  alpha: " << format_double(rep.alpha) << "\n";
  }
  return rep.converged ? exit_ok : exit_convergence;
}

// ---- grad ----

int cmd_grad(const std::string& netlist, const std::string& input, const std::string& param, const std::string& method,
             double eps, const SolveFlags& sf, bool as_json) {
  const CircuitModel model(read_netlist(netlist));
  const Eigen::VectorXd u = input_from_json(read_json_file(input), model.kernel().inputs, input);
  const ParamBinding b = parse_param(param);
  const SolverKind kind = parse_solver(sf.solver);
  const auto opt = sf.options();
  const auto rep = solve(model.kernel(), u, kind, opt);
  if (!rep.converged) {
    std::cerr << "equinet: equilibrium solve did not converge\n";
    return exit_convergence;
  }
  json out{{"param", param}, {"y", vector_to_json(rep.y)}};
  Eigen::VectorXd hw, fd;
  bool kink = near_kink(model.kernel(), rep.z_star, u);
  if (method != "fd") {
    const auto g = gradient_output_wrt_param(model, b, u, rep);
    hw = g.dy;
    kink = g.kink;
    out["hw"] = vector_to_json(hw);
  }
  if (method != "hw") {
    double theta = 0.0;
    if (b.target == ParamTarget::InputOffset) {
      if (b.index >= model.ports()) throw InputError("input offset index out of range");
      theta = u[static_cast<Eigen::Index>(b.index)];
    } else if (b.target != ParamTarget::None) {
      theta = model.parameter(b);
    }
    const double h = eps > 0.0 ? eps : 1e-6 * std::max(1.0, std::abs(theta));
    fd = finite_difference_gradient(model, b, u, h, opt, kind);
    out["fd"] = vector_to_json(fd);
    out["epsilon"] = h;
  }
  out["kink"] = kink;
  double deviation = 0.0;
  if (method == "both") {
    // Central differences carry roundoff of about 1e-16 |y| / eps; the floor
    // keeps a vanishing gradient from turning that noise into a failure.
    const double floor = 1e-4 * std::max(1.0, rep.y.cwiseAbs().maxCoeff());
    const double scale = std::max({hw.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), floor});
    deviation = (hw - fd).cwiseAbs().maxCoeff() / scale;
    out["deviation"] = deviation;
  }
  if (as_json) {
    std::cout << out.dump(2) << "\n";
  } else {
    if (hw.size()) std::cout << "hw: " << join(hw) << "\n";
    if (fd.size()) std::cout << "fd: " << join(fd) << "\n";
    if (method == "both") std::cout << "max relative deviation: " << format_double(deviation) << "\n";
    if (kink) std::cout << "warning: operating point is at a diode kink\n";
  }
  return method == "both" && deviation > 1e-5 ? exit_verification : exit_ok;
}

// ---- check ----

int report_checks(const std::vector<std::pair<std::string, json>>& checks, bool as_json) {
  bool ok = true;
  json j = json::object();
  for (const auto& [name, c] : checks) {
    j[name] = c;
    if (c.value("status", "") == "fail") ok = false;
    if (!as_json) {
      std::cout << name << ": " << c.value("status", "");
      if (c.contains("violation")) std::cout << " (" << format_double(c["violation"].get<double>()) << ")";
      std::cout << "\n";
    }
  }
  if (as_json) std::cout << j.dump(2) << "\n";
  return ok ? exit_ok : exit_verification;
}

json check_json(const CheckResult& r) { return json{{"status", r.ok ? "pass" : "fail"}, {"violation", r.violation}}; }

json stieltjes_json(const Eigen::MatrixXd& A, bool gating) {
  if (A.size() == 0) return json{{"status", "skipped"}};
  const bool ok = check_stieltjes(A);
  return json{{"status", ok ? "pass" : (gating ? "fail" : "no")}};
}

int cmd_check(const std::string& netlist, const std::string& matrix, const std::string& signature, bool as_json) {
  std::vector<std::pair<std::string, json>> checks;
  if (!matrix.empty()) {
    const Eigen::MatrixXd Ht = matrix_from_json(read_json_file(matrix), matrix);
    if (Ht.rows() != Ht.cols()) throw InputError(matrix + ": hybrid matrix must be square");
    Eigen::VectorXd sigma = Eigen::VectorXd::Ones(Ht.rows());
    if (!signature.empty()) {
      sigma = vector_from_json(read_json_file(signature), signature);
      if (sigma.size() != Ht.rows()) throw InputError(signature + ": signature length mismatch");
      for (Eigen::Index i = 0; i < sigma.size(); ++i)
        if (std::abs(sigma[i]) != 1.0) throw InputError(signature + ": entries must be +1 or -1");
    }
    checks.emplace_back("reciprocity", check_json(check_reciprocity(Ht, sigma)));
    checks.emplace_back("dissipative", check_json(check_dissipative(Ht)));
    return report_checks(checks, as_json);
  }
  const CircuitModel model(read_netlist(netlist));
  const auto& h = model.hybrid();
  const auto& k = model.kernel();
  checks.emplace_back("reciprocity", check_json(check_reciprocity(h.Ht, h.signature())));
  checks.emplace_back("dissipative", check_json(check_dissipative(h.Ht)));
  checks.emplace_back("stieltjes_H", stieltjes_json(k.H, false));
  // Voltage-driven block of D: the port conductance matrix.
  std::vector<Eigen::Index> vrows;
  for (std::size_t i = 0; i < k.inputs.size(); ++i)
    if (k.inputs[i] == Quantity::Voltage) vrows.push_back(static_cast<Eigen::Index>(i));
  Eigen::MatrixXd Dvv(static_cast<Eigen::Index>(vrows.size()), static_cast<Eigen::Index>(vrows.size()));
  for (std::size_t a = 0; a < vrows.size(); ++a)
    for (std::size_t b = 0; b < vrows.size(); ++b)
      Dvv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = k.D(vrows[a], vrows[b]);
  checks.emplace_back("stieltjes_D_voltage", stieltjes_json(Dvv, false));
  checks.emplace_back("monotone", json{{"status", is_monotone(k) ? "pass" : "fail"}});
  return report_checks(checks, as_json);
}

// ---- train ----

std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv("EQUINET_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const std::string str(s);
  auto [ptr, ec] = std::from_chars(str.data(), str.data() + str.size(), v);
  if (ec != std::errc{} || ptr != str.data() + str.size()) throw InputError("EQUINET_SEED must be a non-negative integer");
  return v;
}

int cmd_train(const std::string& config, const std::string& out_dir, bool compare, bool quiet) {
  TrainConfig cfg = config_from_json(read_json_file(config), config);
  if (auto s = seed_from_env()) cfg.seed = *s;
  fs::create_directories(out_dir);

  auto run = [&](const TrainConfig& c, const std::string& csv, const std::string& net_file) {
    const auto res = run_experiment(c, [&](std::size_t epoch, double err) {
      if (!quiet && ((epoch + 1) % 25 == 0 || epoch + 1 == c.epochs))
        std::cerr << csv << ": epoch " << epoch + 1 << " error " << format_double(err) << "\n";
    });
    write_curve_csv((fs::path(out_dir) / csv).string(), res.curve.errors);
    if (!net_file.empty()) write_text_file((fs::path(out_dir) / net_file).string(), cascade_to_json(res.nominal).dump(2) + "\n");
    std::cout << csv << ": initial " << format_double(res.curve.initial_error) << " final "
              << format_double(res.curve.errors.empty() ? res.curve.initial_error : res.curve.errors.back());
    if (res.curve.kink_warnings) std::cout << " (kink warnings: " << res.curve.kink_warnings << ")";
    std::cout << "\n";
  };

  if (!compare) {
    run(cfg, "errors.csv", "network.json");
    return exit_ok;
  }
  struct Variant {
    const char* file;
    GradMethod method;
    DeviceModel device;
    bool noisy;
  };
  const Variant variants[] = {
      {"errors_SPICE_nonideal_0_error.csv", GradMethod::HardwareLinearization, DeviceModel::Shockley, false},
      {"errors_split_ideal_0_error.csv", GradMethod::EquilibriumBackprop, DeviceModel::Ideal, false},
      {"errors_SPICE_error_with_comp.csv", GradMethod::HardwareLinearization, DeviceModel::Shockley, true},
      {"errors_split_error_no_comp.csv", GradMethod::EquilibriumBackprop, DeviceModel::Ideal, true},
  };
  for (const auto& v : variants) {
    TrainConfig c = cfg;
    c.method = v.method;
    c.device = v.device;
    if (v.noisy && !c.noise) c.noise = NoiseConfig{};
    if (!v.noisy) c.noise.reset();
    run(c, v.file, "");
  }
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resistor-diode networks as monotone equilibrium networks"};
  app.require_subcommand(1);

  BuildArgs ba;
  auto* build = app.add_subcommand("build", "Write a crossbar netlist");
  build->add_option("--p", ba.p, "Input lines");
  build->add_option("--q", ba.q, "Output lines");
  build->add_option("--layout", ba.layout, "equilibrium (reference lines) or feedforward (common earth)")
      ->check(CLI::IsMember({"equilibrium", "feedforward"}));
  build->add_option("--conductances", ba.conductances, "JSON matrix of conductances (overrides --p/--q)")
      ->check(CLI::ExistingFile);
  build->add_option("--form", ba.form, "conductor or resistor")->check(CLI::IsMember({"conductor", "resistor"}));
  build->add_option("--diode", ba.diode, "ideal or shockley")->check(CLI::IsMember({"ideal", "shockley"}));
  build->add_option("--seed", ba.seed, "Seed for random conductances");
  build->add_option("--g-min", ba.g_min, "Smallest random conductance");
  build->add_option("--g-max", ba.g_max, "Largest random conductance");
  build->add_option("-o,--out", ba.out, "Output file (stdout if omitted)");

  std::string netlist, input, out, param = "none", method = "both", matrix, signature, config, out_dir = ".";
  bool as_json = false, kernel = false, compare = false, quiet = false;
  double eps = 0.0;
  SolveFlags sf;

  auto* infer_cmd = app.add_subcommand("infer", "Solve for the equilibrium and print y");
  infer_cmd->add_option("netlist", netlist, "Netlist or network JSON")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("input", input, "Input vector JSON")->required()->check(CLI::ExistingFile);
  infer_cmd->add_flag("--json", as_json, "Machine-readable output");
  sf.attach(infer_cmd);

  auto* grad = app.add_subcommand("grad", "Output gradient with respect to one parameter");
  grad->add_option("netlist", netlist, "Netlist JSON")->required()->check(CLI::ExistingFile);
  grad->add_option("input", input, "Input vector JSON")->required()->check(CLI::ExistingFile);
  grad->add_option("--param", param, "r:EDGE, g:EDGE, u:INDEX or none");
  grad->add_option("--method", method, "hw, fd or both")->check(CLI::IsMember({"hw", "fd", "both"}));
  grad->add_option("--eps", eps, "Finite-difference step (default 1e-6*max(1,|theta|))");
  grad->add_flag("--json", as_json, "Machine-readable output");
  sf.attach(grad);

  auto* check = app.add_subcommand("check", "Structural property report");
  check->add_option("netlist", netlist, "Netlist JSON")->check(CLI::ExistingFile);
  check->add_option("--matrix", matrix, "Check a hybrid matrix given as JSON instead")->check(CLI::ExistingFile);
  check->add_option("--signature", signature, "Signature (+1/-1 per row) for --matrix")->check(CLI::ExistingFile);
  check->add_flag("--json", as_json, "Machine-readable output");

  auto* train = app.add_subcommand("train", "Run the teacher-student experiment");
  train->add_option("config", config, "Training config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory");
  train->add_flag("--compare", compare, "Run both gradient methods with and without noise");
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* exp = app.add_subcommand("export", "Re-emit a netlist, or its kernel matrices");
  exp->add_option("netlist", netlist, "Netlist JSON")->required()->check(CLI::ExistingFile);
  exp->add_flag("--kernel", kernel, "Write H, B, C, D instead of the netlist");
  exp->add_option("-o,--out", out, "Output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_input;
  }

  try {
    if (*build) return cmd_build(ba);
    if (*infer_cmd) return cmd_infer(netlist, input, sf, as_json);
    if (*grad) return cmd_grad(netlist, input, param, method, eps, sf, as_json);
    if (*check) {
      if (netlist.empty() == matrix.empty()) throw InputError("check needs either a netlist or --matrix");
      return cmd_check(netlist, matrix, signature, as_json);
    }
    if (*train) return cmd_train(config, out_dir, compare, quiet);
    if (*exp) return cmd_export(netlist, kernel, out);
  } catch (const ConvergenceError& e) {
    std::cerr << "equinet: " << e.what() << "\n";
    return exit_convergence;
  } catch (const Error& e) {
    std::cerr << "equinet: " << e.what() << "\n";
    return exit_input;
  } catch (const std::exception& e) {
    std::cerr << "equinet: " << e.what() << "\n";
    return exit_input;
  }
  return exit_input;
}
