// drmlab: command-line front end for the Deep Ritz lab.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "drm/approxnet.hpp"
#include "drm/energy.hpp"
#include "drm/errors.hpp"
#include "drm/experiment.hpp"
#include "drm/optdiag.hpp"
#include "drm/pgd.hpp"
#include "drm/statbound.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drm;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;
constexpr int kCapacity = 4;

// Validation failure already formatted against its source file.
class ConfigFailure : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Source {
    std::string path;
    std::string text;
    json doc;
};

Source load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigFailure(path + ": cannot open file");
    std::stringstream buf;
    buf << in.rdbuf();
    Source src{path, buf.str(), {}};
    try {
        src.doc = json::parse(src.text);
    } catch (const json::parse_error& e) {
        throw ConfigFailure(path + ":" + std::to_string(offset_line(src.text, e.byte)) + ": invalid JSON: " + e.what());
    }
    return src;
}

// Runs f, turning InputErrors into messages anchored to the line of their pointer.
template <class F>
auto within(const Source& src, F&& f) {
    try {
        return f();
    } catch (const InputError& e) {
        const std::size_t line = pointer_line(src.text, e.pointer());
        std::string where = src.path + ":" + std::to_string(line == 0 ? 1 : line) + ": ";
        if (!e.pointer().empty()) where += e.pointer() + ": ";
        throw ConfigFailure(where + e.what());
    } catch (const json::exception& e) {
        throw ConfigFailure(src.path + ":1: " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigFailure(path.string() + ": cannot write");
    out << content;
}

int resolve_threads(int flag, bool deterministic) {
    if (deterministic) return 1;
    if (flag > 0) return flag;
    if (const char* env = std::getenv("DRM_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

// ---------------------------------------------------------------- solve

struct SolveArgs {
    std::string config;
    std::string output;
    bool deterministic = false;
    int threads = 0;
};

int cmd_solve(const SolveArgs& a) {
    const Source src = load_json(a.config);
    ExperimentConfig cfg = within(src, [&] { return experiment_from_json(src.doc); });
    cfg.pgd.exec.threads = resolve_threads(a.threads, a.deterministic);
    const fs::path out = a.output.empty() ? fs::path(cfg.output_dir) : fs::path(a.output);
    const std::string hash = config_hash(src.doc);

    const SampleSet samples = draw_samples(cfg.problem, cfg.n_interior, cfg.n_boundary, cfg.sample_seed);
    const TrainState state = train(cfg.problem, cfg.shape, cfg.pgd, samples);
    const ParallelNetwork net = state.network();

    write_file(out / "history.csv", with_hash_footer(history_csv(state.history), hash));
    write_file(out / "samples_interior.csv", with_hash_footer(samples.interior_csv(), hash));
    write_file(out / "samples_boundary.csv", with_hash_footer(samples.boundary_csv(), hash));
    write_file(out / "checkpoint.json", checkpoint_to_json(state, src.doc).dump(2) + "\n");

    const double first = state.history.front().energy;
    const double last = empirical_energy(net, samples, cfg.problem, cfg.pgd.exec);
    json summary = {{"config_hash", hash},
                    {"iterations", state.iteration},
                    {"initial_energy", first},
                    {"final_energy", last},
                    {"energy_decreased", last < first},
                    {"l2_slack", state.l2_slack(cfg.pgd.eta)},
                    {"l1_slack", state.l1_slack(cfg.pgd.zeta)},
                    {"N_in", cfg.n_interior},
                    {"N_b", cfg.n_boundary},
                    {"seed", cfg.seed},
                    {"h1_error", nullptr},
                    {"relative_h1_error", nullptr},
                    {"reference_energy", nullptr}};
    if (cfg.problem.exact) {
        const double err = h1_error(network_evaluator(net), cfg.problem, cfg.pgd.quad);
        const Evaluator exact = field_evaluator(*cfg.problem.exact);
        const double norm = h1_norm(exact, cfg.problem.dim(), cfg.problem.box, cfg.pgd.quad);
        summary["h1_error"] = err;
        summary["relative_h1_error"] = norm > 0.0 ? json(err / norm) : json(nullptr);
        summary["reference_energy"] = continuous_energy(exact, cfg.problem, cfg.pgd.quad);
    }
    if (!cfg.problem.warnings.empty()) summary["warnings"] = cfg.problem.warnings;
    const std::string text = summary.dump(2) + "\n";
    write_file(out / "summary.json", text);
    std::cout << text;
    return kOk;
}

// ---------------------------------------------------------------- schedule

struct ScheduleArgs {
    double epsilon = 0.1;
    std::size_t d = 1;
    double n = 3;
    double mu = 0.5;
    double beta = 1.0;
    ScheduleConstants constants;
};

int cmd_schedule(const ScheduleArgs& a) {
    ScheduleParams p;
    try {
        p = schedule(a.epsilon, a.d, a.n, a.mu, a.beta, a.constants);
    } catch (const InputError& e) {
        throw ConfigFailure("schedule: --" + e.pointer().substr(1) + ": " + e.what());
    }
    std::cout << p.to_json().dump(2) << "\n";
    return kOk;
}

// ---------------------------------------------------------------- approx

struct ApproxArgs {
    std::string preset = "square";
    double epsilon = 0.05;
    std::size_t n = 3;
    std::size_t d = 1;
    std::size_t k = 1;
    std::size_t max_subnets = 100000;
    std::string output = "drm_approx";
};

AnalyticField preset_field(const std::string& name, std::size_t d) {
    using M = AnalyticField::Monomial;
    if (name == "zero") return AnalyticField::constant(d, 0.0);
    if (name == "square") return AnalyticField::polynomial(d, {M{1.0, {2}}});
    if (name == "product") {
        if (d < 2) throw ConfigFailure("approx: --d: preset 'product' needs d >= 2");
        return AnalyticField::polynomial(d, {M{1.0, {1, 1}}});
    }
    if (name == "cosine") return AnalyticField::cosine_product(d, 1.0, 1.0);
    throw ConfigFailure("approx: --preset: unknown preset '" + name + "' (zero, square, product, cosine)");
}

int cmd_approx(const ApproxArgs& a) {
    if (a.d < 1) throw ConfigFailure("approx: --d: must be at least 1");
    const AnalyticField f = preset_field(a.preset, a.d);
    AssembleOptions opt;
    opt.k = a.k;
    opt.max_subnets = a.max_subnets;
    Approximant ap;
    try {
        ap = assemble_approximant(f, a.epsilon, a.n, opt);
    } catch (const InputError& e) {
        throw ConfigFailure("approx: " + std::string(e.what()));
    }
    const json flags = {{"preset", a.preset}, {"epsilon", a.epsilon}, {"n", a.n},
                        {"d", a.d},           {"k", a.k},             {"max_subnets", a.max_subnets}};
    const fs::path out(a.output);
    write_file(out / "approximant.json", approximant_to_json(ap).dump() + "\n");
    json report = {{"config_hash", config_hash(flags)},
                   {"flags", flags},
                   {"sobolev_order", a.k},
                   {"measured_error", ap.measured_error},
                   {"target", a.epsilon},
                   {"target_met", ap.measured_error <= a.epsilon},
                   {"taylor_error", ap.taylor_error},
                   {"subnetworks", ap.net.size()},
                   {"width", ap.width},
                   {"depth", ap.depth},
                   {"coefficient_l1", ap.coefficient_l1},
                   {"max_weight", ap.max_weight},
                   {"provenance", ap.provenance()}};
    const std::string text = report.dump(2) + "\n";
    write_file(out / "report.json", text);
    std::cout << text;
    return kOk;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
    std::string checkpoint;
    std::string approximant;
    std::string config;
    std::string output;
};

int cmd_diagnose(const DiagnoseArgs& a) {
    const Source cfg_src = load_json(a.config);
    const Source ck_src = load_json(a.checkpoint);
    const Source ap_src = load_json(a.approximant);
    const ExperimentConfig cfg = within(cfg_src, [&] { return experiment_from_json(cfg_src.doc); });
    const TrainState state = within(ck_src, [&] { return checkpoint_from_json(ck_src.doc); });
    const ParallelNetwork reference = within(ap_src, [&] { return network_from_json(ap_src.doc); });
    const ParallelNetwork trained = state.network();
    if (trained.input_dim() != cfg.problem.dim())
        throw ConfigFailure(a.checkpoint + ":1: /network/d: network dimension differs from the problem");
    if (reference.input_dim() != cfg.problem.dim())
        throw ConfigFailure(a.approximant + ":1: /d: approximant dimension differs from the problem");
    if (!cfg.problem.exact) throw ConfigFailure(a.config + ":" + std::to_string(pointer_line(cfg_src.text, "/problem")) +
                                                ": /problem/u0: diagnose needs an exact solution u0");

    const SampleSet samples = draw_samples(cfg.problem, cfg.n_interior, cfg.n_boundary, cfg.sample_seed);
    const double e_sta = measured_statistical_term(trained, reference, cfg.problem, samples, cfg.pgd.quad);
    const Decomposition dec =
        error_decomposition(trained, reference, cfg.problem, samples, e_sta, "measured", cfg.pgd.quad);

    json match;
    const NetShape ts = trained.shape();
    const NetShape rs = reference.shape();
    const std::size_t need = rs.m * cfg.match_R;
    if (ts.width != rs.width || ts.depth != rs.depth) {
        match = {{"skipped", "approximant sub-networks have a different width or depth than the trained network"}};
    } else if (need > ts.m) {
        match = {{"skipped", "trained network has fewer than targets * R sub-networks"}};
    } else {
        const auto init = subnet_vectors(state.init_inner, ts);
        const auto targets = subnet_vectors(reference);
        const MatchReport rep = match_initialization(init, targets, cfg.match_R, cfg.match_delta);
        match = rep.to_json();
        const std::size_t Q = ts.m / need;
        match["event_probability_bound"] =
            event_probability_bound(rs.m, cfg.match_R, Q, std::min(cfg.match_delta, 2 * cfg.pgd.B), cfg.pgd.B,
                                    ts.width, ts.depth);
        match["Q"] = Q;
    }

    const std::string hash = config_hash(cfg_src.doc);
    const json report = {{"config_hash", hash},
                         {"decomposition", dec.to_json()},
                         {"bound_holds", dec.h1_sq_measured <= dec.total_bound},
                         {"match", match}};
    const fs::path out = a.output.empty() ? fs::path(cfg.output_dir) : fs::path(a.output);
    const std::string text = report.dump(2) + "\n";
    write_file(out / "diagnose.json", text);
    write_file(out / "decomposition.csv",
               with_hash_footer(Decomposition::csv_header() + "\n" + dec.csv_row() + "\n", hash));
    std::cout << text;
    return kOk;
}

// ---------------------------------------------------------------- statbench

struct StatbenchArgs {
    std::string spec;
    std::string output;
};

int cmd_statbench(const StatbenchArgs& a) {
    const Source src = load_json(a.spec);
    struct Bench {
        ClassSpec cls;
        EllipticProblem problem;
        std::vector<std::size_t> sizes;
        std::size_t trials = 64;
        std::uint64_t seed = 1;
        double constant = 1.0;
        std::string output = "drm_statbench";
    };
    const Bench b = within(src, [&] {
        const json& doc = src.doc;
        if (!doc.is_object()) throw InputError("spec must be an object", "");
        Bench out;
        out.cls = ClassSpec::from_json(doc.value("class", json::object()), "/class");
        if (doc.contains("problem")) {
            out.problem = problem_from_json(doc.at("problem"), "/problem");
        } else {
            out.problem = manufacture(AnalyticField::cosine_product(out.cls.d, 1.0, 1.0),
                                      AnalyticField::constant(out.cls.d, 1.0), Box::unit(out.cls.d));
        }
        if (out.problem.dim() != out.cls.d) throw InputError("class d differs from the problem dimension", "/class/d");
        out.sizes = doc.value("sizes", std::vector<std::size_t>{100, 1000, 10000, 100000});
        if (out.sizes.empty()) throw InputError("'sizes' must not be empty", "/sizes");
        for (std::size_t i = 0; i < out.sizes.size(); ++i)
            if (out.sizes[i] == 0) throw InputError("sample sizes must be positive", "/sizes/" + std::to_string(i));
        out.trials = doc.value("trials", std::size_t{64});
        if (out.trials == 0) throw InputError("'trials' must be at least 1", "/trials");
        out.seed = doc.value("seed", std::uint64_t{1});
        out.constant = doc.value("constant", 1.0);
        if (!(out.constant > 0.0)) throw InputError("'constant' must be positive", "/constant");
        out.output = doc.value("output", out.output);
        return out;
    });
    const auto rows = statistical_sweep(b.problem, b.cls, b.sizes, b.trials, b.seed, b.constant,
                                        QuadratureSpec::default_for(b.cls.d));
    const std::string hash = config_hash(src.doc);
    const fs::path out = a.output.empty() ? fs::path(b.output) : fs::path(a.output);
    write_file(out / "statbench.csv", with_hash_footer(sweep_csv(rows), hash));

    json summary = {{"config_hash", hash}, {"rows", json::array()}};
    for (const auto& r : rows) summary["rows"].push_back({{"N_s", r.N_s}, {"gap", r.gap}, {"bound", r.bound}});
    if (rows.size() >= 2) {
        std::vector<double> x, y;
        bool positive = true;
        for (const auto& r : rows) {
            x.push_back(static_cast<double>(r.N_s));
            y.push_back(r.gap);
            positive = positive && r.gap > 0.0;
        }
        summary["loglog_slope"] = positive ? json(loglog_slope(x, y)) : json(nullptr);
        // rows hold the bound at the requested constant; rescale to constant 1 before calibrating
        std::vector<SweepRow> unit = rows;
        for (auto& r : unit) r.bound /= b.constant;
        summary["calibrated_constant"] = calibrate_bound_constant(unit);
    }
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep Ritz method solver and verification lab"};
    app.require_subcommand(1);

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "train a network on a configured problem");
    s->add_option("--config", solve.config, "experiment JSON")->required();
    s->add_option("--output", solve.output, "output directory (overrides the config)");
    s->add_flag("--deterministic", solve.deterministic, "single-threaded, sequential reductions");
    s->add_option("--threads", solve.threads, "worker threads (default: DRM_THREADS or 1)");

    ScheduleArgs sched;
    auto* sc = app.add_subcommand("schedule", "evaluate the convergence-rate parameter schedule");
    sc->add_option("--epsilon", sched.epsilon)->required();
    sc->add_option("--d", sched.d)->required();
    sc->add_option("--n", sched.n)->required();
    sc->add_option("--mu", sched.mu)->required();
    sc->add_option("--beta", sched.beta)->required();
    sc->add_option("--C", sched.constants.C, "universal constant C");
    sc->add_option("--C0", sched.constants.C0);
    sc->add_option("--C0-prime", sched.constants.C0_prime);

    ApproxArgs approx;
    auto* ap = app.add_subcommand("approx", "assemble a localized Taylor approximant");
    ap->add_option("--preset", approx.preset, "zero | square | product | cosine")->required();
    ap->add_option("--epsilon", approx.epsilon)->required();
    ap->add_option("--n", approx.n)->required();
    ap->add_option("--d", approx.d)->required();
    ap->add_option("--k", approx.k, "Sobolev order of the error (0 or 1)");
    ap->add_option("--max-subnets", approx.max_subnets);
    ap->add_option("--output", approx.output);

    DiagnoseArgs diag;
    auto* dg = app.add_subcommand("diagnose", "error decomposition of a trained network");
    dg->add_option("--checkpoint", diag.checkpoint)->required();
    dg->add_option("--approximant", diag.approximant)->required();
    dg->add_option("--config", diag.config)->required();
    dg->add_option("--output", diag.output);

    StatbenchArgs bench;
    auto* sb = app.add_subcommand("statbench", "statistical-gap sweep against the sample-size bound");
    sb->add_option("--spec", bench.spec)->required();
    sb->add_option("--output", bench.output);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*s) return cmd_solve(solve);
        if (*sc) return cmd_schedule(sched);
        if (*ap) return cmd_approx(approx);
        if (*dg) return cmd_diagnose(diag);
        if (*sb) return cmd_statbench(bench);
    } catch (const ConfigFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const InputError& e) {
        std::cerr << "error: " << (e.pointer().empty() ? "" : e.pointer() + ": ") << e.what() << "\n";
        return kConfig;
    } catch (const NumericAbort& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kNumeric;
    } catch (const CapacityError& e) {
        std::cerr << "capacity refused: " << e.what() << " (required " << e.required() << ")\n";
        return kCapacity;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
    return kConfig;
}
