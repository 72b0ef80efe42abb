// rwm: command-line front end for mixture fitting, kernel export, SVM
// training/prediction, tuning, benchmarks and level-curve data.

#include "rwm/rwm.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_partial = 2;

struct Common {
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", c.threads, "Worker thread cap")->capture_default_str()->check(CLI::Range(1U, 1024U));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw rwm::error("cannot write '" + path + "'");
    return out;
}

std::shared_ptr<const rwm::MixtureModel> load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw rwm::error("cannot open model file '" + path + "'");
    return std::make_shared<const rwm::MixtureModel>(rwm::read_model(in));
}

std::vector<double> parse_reals(const std::string& s) {
    std::vector<double> out;
    for (auto part : rwm::split(s, ',')) {
        part = rwm::trim(part);
        if (!part.empty()) out.push_back(rwm::parse_real(part));
    }
    return out;
}

std::vector<int> parse_exponents(const std::string& s) {
    // Same list syntax as the bench config: "a..b" ranges and comma lists.
    return rwm::detail::parse_int_list(s, 0);
}

rwm::Matrix all_rows_matrix(const rwm::Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return ds.continuous_matrix(all);
}

struct KernelFlags {
    std::string family = "rwm";
    std::string model_path;
    double gamma = 1.0;
    double alpha = 1.0;
    double beta = 1.0;

    void add(CLI::App* cmd, bool with_params) {
        cmd->add_option("--kernel", family, "Kernel family: rbf, gmm or rwm")->capture_default_str();
        cmd->add_option("--model", model_path, "Mixture model file (gmm and rwm kernels; tune also uses it for rbf)");
        if (!with_params) return;
        cmd->add_option("--gamma", gamma, "Kernel width")->capture_default_str();
        cmd->add_option("--alpha", alpha, "Weight of the continuous term")->capture_default_str();
        cmd->add_option("--beta", beta, "Weight of the categorical term")->capture_default_str();
    }

    [[nodiscard]] rwm::KernelSpec spec() const {
        rwm::KernelSpec s;
        s.family = rwm::parse_family(family);
        if (s.family == rwm::KernelFamily::linear) throw rwm::invalid_argument("linear kernel is internal to tuning");
        s.gamma = gamma;
        s.alpha = alpha;
        s.beta = beta;
        if (s.needs_model()) {
            if (model_path.empty()) throw rwm::invalid_argument("--model is required for kernel '" + family + "'");
            s.model = load_model(model_path);
        }
        s.validate();
        return s;
    }
};

std::vector<std::size_t> labeled_rows(const rwm::Dataset& ds) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.samples[i].label) idx.push_back(i);
    return idx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised SVM toolkit with mixture-model based kernels"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "rwm 1.0.0");

    // fit-gmm
    Common fit_c;
    std::string fit_data, fit_schema, fit_out, fit_algo = "vi";
    std::size_t fit_k = 2;
    rwm::ViHyperParams fit_hp;
    bool fit_repr = false;
    double fit_bandwidth = 0.0;
    std::size_t fit_mc = 1000;
    auto* fit = app.add_subcommand("fit-gmm", "Fit a Gaussian mixture to the continuous columns");
    fit->add_option("--data", fit_data, "CSV file")->required();
    fit->add_option("--schema", fit_schema, "Schema file")->required();
    fit->add_option("--out", fit_out, "Output model file")->required();
    fit->add_option("--algo", fit_algo, "vi or em")->check(CLI::IsMember({"vi", "em"}))->capture_default_str();
    fit->add_option("--k", fit_k, "Components for EM")->capture_default_str();
    fit->add_option("--k-init", fit_hp.k_init, "Initial components for VI")->capture_default_str();
    fit->add_option("--alpha0", fit_hp.alpha0, "Dirichlet concentration")->capture_default_str();
    fit->add_option("--beta0", fit_hp.beta0, "Mean prior precision scaling")->capture_default_str();
    fit->add_option("--w0", fit_hp.w0, "Wishart scale factor")->capture_default_str();
    fit->add_option("--max-iter", fit_hp.max_iter, "Iteration cap")->capture_default_str();
    fit->add_option("--tol", fit_hp.tol, "Relative convergence tolerance")->capture_default_str();
    fit->add_option("--prune-weight", fit_hp.prune_weight, "Pruning threshold on N_k / N")->capture_default_str();
    fit->add_flag("--representativity", fit_repr, "Report the representativity score");
    fit->add_option("--bandwidth", fit_bandwidth, "Parzen bandwidth (0 = automatic)")->capture_default_str();
    fit->add_option("--mc-samples", fit_mc, "Monte-Carlo samples for representativity")->capture_default_str();
    add_common(fit, fit_c);

    // gram
    Common gram_c;
    std::string gram_data, gram_schema, gram_out;
    KernelFlags gram_k;
    bool gram_psd = false;
    double gram_psd_tol = 1e-8;
    auto* gram = app.add_subcommand("gram", "Export a precomputed Gram matrix");
    gram->add_option("--data", gram_data, "CSV file")->required();
    gram->add_option("--schema", gram_schema, "Schema file")->required();
    gram->add_option("--out", gram_out, "Output matrix file; the fingerprint goes to <out>.meta")->required();
    gram_k.add(gram, true);
    gram->add_flag("--psd-check", gram_psd, "Report the smallest eigenvalue");
    gram->add_option("--psd-tol", gram_psd_tol, "Relative PSD tolerance")->capture_default_str();
    add_common(gram, gram_c);

    // train
    Common train_c;
    std::string train_data, train_schema, train_out;
    KernelFlags train_k;
    double train_cost = 1.0;
    rwm::SmoOptions train_smo;
    auto* train = app.add_subcommand("train", "Train a one-vs-one SVM on the labeled rows");
    train->add_option("--data", train_data, "CSV file")->required();
    train->add_option("--schema", train_schema, "Schema file")->required();
    train->add_option("--out", train_out, "Output SVM model file")->required();
    train_k.add(train, true);
    train->add_option("--c", train_cost, "Penalty C")->capture_default_str();
    train->add_option("--tol", train_smo.tol, "SMO stopping tolerance")->capture_default_str();
    add_common(train, train_c);

    // predict
    Common pred_c;
    std::string pred_model, pred_data, pred_schema, pred_out;
    auto* pred = app.add_subcommand("predict", "Classify rows with a trained SVM");
    pred->add_option("--svm", pred_model, "SVM model file")->required();
    pred->add_option("--data", pred_data, "CSV file")->required();
    pred->add_option("--schema", pred_schema, "Schema file")->required();
    pred->add_option("--out", pred_out, "Predictions CSV (stdout when omitted)");
    add_common(pred, pred_c);

    // tune
    Common tune_c;
    std::string tune_data, tune_schema, tune_search = "grid", tune_trace;
    std::string tune_cexp = "-3..2", tune_gexp = "-3..2", tune_alpha, tune_beta, tune_mode = "mixture_posterior";
    KernelFlags tune_k;
    std::size_t tune_inner = 4;
    double tune_lambda = 0.5;
    auto* tune = app.add_subcommand("tune", "Inner-CV hyperparameter search on the labeled rows");
    tune->add_option("--data", tune_data, "CSV file; rows labeled '?' act as unlabeled samples")->required();
    tune->add_option("--schema", tune_schema, "Schema file")->required();
    tune_k.add(tune, false);
    tune->add_option("--search", tune_search, "grid or keerthi_lin")
        ->check(CLI::IsMember({"grid", "keerthi_lin"}))
        ->capture_default_str();
    tune->add_option("--c-exponents", tune_cexp, "log10 C values, e.g. -3..2")->capture_default_str();
    tune->add_option("--gamma-exponents", tune_gexp, "log10 gamma values")->capture_default_str();
    tune->add_option("--alpha-steps", tune_alpha, "alpha values (default 1, or 0..1 in 0.1 steps with categorical data)");
    tune->add_option("--beta-steps", tune_beta, "beta values");
    tune->add_option("--inner-folds", tune_inner, "Inner folds")->capture_default_str();
    tune->add_option("--lambda", tune_lambda, "Weight of the validation error")->capture_default_str();
    tune->add_option("--expected-error", tune_mode, "mixture_posterior, decision_margin, vote_margin or none")->capture_default_str();
    tune->add_option("--trace", tune_trace, "Write every evaluated cell to this file");
    add_common(tune, tune_c);

    // bench
    Common bench_c;
    std::string bench_config, bench_report, bench_cd;
    bool bench_dry = false;
    bool bench_no_timing = false;
    auto* bench = app.add_subcommand("bench", "Run a benchmark described by a config file");
    bench->add_option("config", bench_config, "Config file")->required();
    bench->add_option("--report", bench_report, "Report file (overrides config; stdout when unset)");
    bench->add_option("--cd-data", bench_cd, "Critical-difference plot data (overrides config)");
    bench->add_flag("--dry-run", bench_dry, "Print the planned cells and exit");
    bench->add_flag("--no-timing", bench_no_timing, "Omit the timing section");
    add_common(bench, bench_c);

    // levelcurves
    Common lc_c;
    std::string lc_measure = "euclidean", lc_model, lc_anchor = "0,0", lc_levels = "0.5,1,1.5,2,2.5,3", lc_box = "-3,3,-3,3",
                lc_out;
    std::size_t lc_res = 400;
    bool lc_no_grid = false;
    auto* lc = app.add_subcommand("levelcurves", "Distance field and contours around an anchor point");
    lc->add_option("--measure", lc_measure, "euclidean, gmm or rwm")->capture_default_str();
    lc->add_option("--model", lc_model, "Mixture model file (gmm and rwm)");
    lc->add_option("--anchor", lc_anchor, "Anchor point x,y")->capture_default_str();
    lc->add_option("--levels", lc_levels, "Comma-separated contour levels")->capture_default_str();
    lc->add_option("--box", lc_box, "xmin,xmax,ymin,ymax")->capture_default_str();
    lc->add_option("--resolution", lc_res, "Lattice points per axis")->capture_default_str();
    lc->add_option("--out", lc_out, "Output file")->required();
    lc->add_flag("--no-grid", lc_no_grid, "Write only the contour polylines");
    add_common(lc, lc_c);

    // synth
    Common syn_c;
    std::string syn_gen, syn_out, syn_schema_out;
    std::size_t syn_n = 800;
    double syn_noise = 0.1;
    auto* syn = app.add_subcommand("synth", "Write one of the built-in two-dimensional datasets");
    syn->add_option("--generator", syn_gen, "concentric, two_moons or five_processes")
        ->required()
        ->check(CLI::IsMember({"concentric", "two_moons", "five_processes"}));
    syn->add_option("--n", syn_n, "Sample count")->capture_default_str();
    syn->add_option("--noise", syn_noise, "Noise level for two_moons")->capture_default_str();
    syn->add_option("--out", syn_out, "Output CSV")->required();
    syn->add_option("--schema-out", syn_schema_out, "Output schema file");
    add_common(syn, syn_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (fit->parsed()) {
            const auto ds = rwm::load_dataset(fit_data, fit_schema);
            const rwm::Matrix X = all_rows_matrix(ds);
            if (X.cols() == 0) throw rwm::invalid_argument("dataset has no continuous columns");
            rwm::MixtureModel model = [&] {
                if (fit_algo == "em") {
                    const auto r = rwm::fit_em(X, fit_k, fit_c.seed, fit_hp.max_iter, fit_hp.tol);
                    std::cout << "algorithm em\ncomponents " << r.model.size() << "\nobjective "
                              << rwm::format_real(r.objective.empty() ? 0.0 : r.objective.back()) << "\nconverged "
                              << (r.converged ? 1 : 0) << "\niterations " << r.iterations << '\n';
                    return r.model;
                }
                fit_hp.seed = fit_c.seed;
                const auto r = rwm::fit_vi(X, fit_hp);
                std::cout << "algorithm vi\ncomponents " << r.model.size() << "\nobjective "
                          << rwm::format_real(r.bound.empty() ? 0.0 : r.bound.back()) << "\nconverged "
                          << (r.converged ? 1 : 0) << "\niterations " << r.iterations << '\n';
                return r.model;
            }();
            if (fit_repr) {
                const double h = fit_bandwidth > 0.0 ? fit_bandwidth : rwm::reference_bandwidth(X);
                std::cout << "representativity " << rwm::format_real(rwm::representativity(model, X, h, fit_mc, fit_c.seed))
                          << '\n';
            }
            auto out = open_out(fit_out);
            rwm::write_model(out, model);
            return exit_ok;
        }

        if (gram->parsed()) {
            const auto ds = rwm::load_dataset(gram_data, gram_schema);
            const auto spec = gram_k.spec();
            const auto g = rwm::build_gram(spec, ds.samples, gram_c.threads);
            {
                auto out = open_out(gram_out);
                rwm::write_gram(out, g);
                auto meta = open_out(gram_out + ".meta");
                rwm::write_gram_sidecar(meta, g);
            }
            std::cout << "samples " << g.size() << "\nfingerprint " << g.fingerprint << '\n';
            if (gram_psd) {
                const auto r = rwm::psd_check(g, gram_psd_tol);
                std::cout << "psd " << (r.is_psd ? "pass" : "fail") << "\nmin_eigenvalue "
                          << rwm::format_real(r.min_eigenvalue) << "\nmax_eigenvalue "
                          << rwm::format_real(r.max_eigenvalue) << '\n';
            }
            return exit_ok;
        }

        if (train->parsed()) {
            const auto ds = rwm::load_dataset(train_data, train_schema);
            const auto spec = train_k.spec();
            const auto idx = labeled_rows(ds);
            if (idx.empty()) throw rwm::invalid_argument("no labeled rows to train on");
            const auto samples = ds.subset(idx);
            std::vector<int> y;
            for (const auto& s : samples) y.push_back(*s.label);
            const auto g = rwm::build_gram(spec, samples, train_c.threads, idx);
            const auto m = rwm::train_multiclass(g, y, train_cost, spec, samples, ds.class_ids, train_smo, train_c.threads);
            auto out = open_out(train_out);
            rwm::write_svm_model(out, m);
            std::cout << "labeled " << idx.size() << "\nmachines " << m.binaries.size() << "\nsupport_vectors "
                      << rwm::count_support_vectors(m) << "\nconverged " << (m.solution().converged() ? 1 : 0) << '\n';
            return exit_ok;
        }

        if (pred->parsed()) {
            std::ifstream in(pred_model);
            if (!in) throw rwm::error("cannot open SVM model '" + pred_model + "'");
            const auto m = rwm::read_svm_model(in);
            const auto ds = rwm::load_dataset(pred_data, pred_schema);
            if (ds.class_ids != m.classes)
                throw rwm::invalid_argument("dataset classes do not match the classes of the SVM model");
            const auto pv = rwm::predict_batch(m, ds.samples, pred_c.threads);
            std::ostringstream os;
            os << "row,predicted,label\n";
            std::size_t labeled = 0;
            std::size_t right = 0;
            for (std::size_t i = 0; i < pv.size(); ++i) {
                const auto& lab = ds.samples[i].label;
                os << i << ',' << m.classes[static_cast<std::size_t>(pv[i])] << ','
                   << (lab ? m.classes[static_cast<std::size_t>(*lab)] : std::string{"?"}) << '\n';
                if (lab) {
                    ++labeled;
                    right += *lab == pv[i] ? 1 : 0;
                }
            }
            if (pred_out.empty()) {
                std::cout << os.str();
            } else {
                auto out = open_out(pred_out);
                out << os.str();
            }
            if (labeled > 0) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.3f", 100.0 * static_cast<double>(right) / static_cast<double>(labeled));
                std::cerr << "accuracy " << buf << " (" << right << '/' << labeled << ")\n";
            }
            return exit_ok;
        }

        if (tune->parsed()) {
            const auto ds = rwm::load_dataset(tune_data, tune_schema);
            rwm::KernelSpec spec = tune_k.spec();
            rwm::OuterSplit split;
            std::vector<int> strata;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (ds.samples[i].label) {
                    split.labeled_idx.push_back(i);
                    strata.push_back(*ds.samples[i].label);
                } else {
                    split.unlabeled_idx.push_back(i);
                }
            }
            if (split.labeled_idx.size() < tune_inner)
                throw rwm::invalid_argument("fewer labeled rows than inner folds");
            rwm::Rng rng = rwm::make_rng(tune_c.seed, 0x494e);
            split.inner_folds = rwm::detail::stratified_partition(split.labeled_idx, strata, tune_inner, rng);
            rwm::Grid grid = ds.schema.encoded_dim() > 0 ? rwm::Grid::mixed() : rwm::Grid::standard();
            grid.c_exponents = parse_exponents(tune_cexp);
            grid.gamma_exponents = parse_exponents(tune_gexp);
            if (!tune_alpha.empty()) grid.alpha_steps = parse_reals(tune_alpha);
            if (!tune_beta.empty()) grid.beta_steps = parse_reals(tune_beta);
            rwm::TuneOptions opt;
            opt.lambda = tune_lambda;
            opt.expected_error = rwm::parse_expected_error_mode(tune_mode);
            opt.threads = tune_c.threads;
            if (!spec.needs_model() && !tune_k.model_path.empty()) opt.posterior_model = load_model(tune_k.model_path);
            rwm::TuneResult r;
            if (tune_search == "grid") {
                r = rwm::grid_search(ds, split, spec, grid, opt);
            } else {
                const auto kl = rwm::keerthi_lin_search(ds, split, spec, grid, opt);
                r = kl.result;
                std::cout << "c_tilde_exponent " << kl.c_tilde_exponent << "\nline_length " << kl.line_length
                          << "\nfallback " << (kl.fallback ? 1 : 0) << '\n';
            }
            std::cout << "evaluations " << r.evaluations << "\nc " << rwm::format_real(r.best.c) << "\ngamma "
                      << rwm::format_real(r.best.gamma) << "\nalpha " << rwm::format_real(r.best.alpha) << "\nbeta "
                      << rwm::format_real(r.best.beta) << "\nval_error " << rwm::format_real(r.best.score.val_error)
                      << "\ncombined " << rwm::format_real(r.best.score.combined) << '\n';
            if (!tune_trace.empty()) {
                auto out = open_out(tune_trace);
                rwm::write_tuning_trace(out, r);
            }
            return exit_ok;
        }

        if (bench->parsed()) {
            rwm::ExperimentConfig cfg;
            try {
                cfg = rwm::load_config(bench_config);
            } catch (const rwm::parse_error& e) {
                std::cerr << bench_config << ':' << e.line() << ": " << e.what() << '\n';
                return exit_usage;
            }
            if (bench->count("--seed") > 0) cfg.seed = bench_c.seed;
            if (bench->count("--threads") > 0) {
                cfg.threads = bench_c.threads;
                cfg.tune.threads = bench_c.threads;
            }
            if (!bench_report.empty()) cfg.report_path = bench_report;
            if (!bench_cd.empty()) cfg.cd_path = bench_cd;
            if (bench_dry) {
                for (const auto& line : rwm::plan_experiment(cfg)) std::cout << line << '\n';
                return exit_ok;
            }
            const auto rep = rwm::run_experiment(cfg);
            if (cfg.report_path.empty()) {
                rwm::write_report(std::cout, rep, !bench_no_timing);
            } else {
                auto out = open_out(cfg.report_path);
                rwm::write_report(out, rep, !bench_no_timing);
            }
            if (!cfg.cd_path.empty()) {
                auto out = open_out(cfg.cd_path);
                rwm::write_cd_data(out, rep);
            }
            for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
            if (rep.partial_failure()) {
                std::cerr << "error: some cells failed; see the report\n";
                return exit_partial;
            }
            return exit_ok;
        }

        if (lc->parsed()) {
            const auto measure = rwm::parse_measure(lc_measure);
            const auto a = parse_reals(lc_anchor);
            rwm::Vector anchor(static_cast<Eigen::Index>(a.size()));
            for (std::size_t i = 0; i < a.size(); ++i) anchor(static_cast<Eigen::Index>(i)) = a[i];
            const auto b = parse_reals(lc_box);
            if (b.size() != 4) throw rwm::invalid_argument("--box needs xmin,xmax,ymin,ymax");
            std::shared_ptr<const rwm::MixtureModel> model;
            if (measure != rwm::Measure::euclidean) {
                if (lc_model.empty()) throw rwm::invalid_argument("--model is required for measure '" + lc_measure + "'");
                model = load_model(lc_model);
            }
            const auto g = rwm::evaluate_grid(measure, model.get(), anchor, {b[0], b[1], b[2], b[3]}, lc_res, lc_res);
            const auto curves = rwm::contour_levels(g, parse_reals(lc_levels));
            auto out = open_out(lc_out);
            rwm::write_levelcurves(out, measure, anchor, g, curves, !lc_no_grid);
            std::cout << "curves " << curves.size() << '\n';
            return exit_ok;
        }

        if (syn->parsed()) {
            rwm::Dataset ds;
            if (syn_gen == "concentric") ds = rwm::synthetic::concentric_gaussians(syn_n, syn_c.seed);
            else if (syn_gen == "two_moons") ds = rwm::synthetic::two_moons(syn_n, syn_noise, syn_c.seed);
            else ds = rwm::synthetic::five_processes(std::max<std::size_t>(syn_n / 5, 1), syn_c.seed);
            auto out = open_out(syn_out);
            rwm::write_dataset(out, ds);
            if (!syn_schema_out.empty()) {
                auto s = open_out(syn_schema_out);
                rwm::write_schema(s, ds.schema);
            }
            return exit_ok;
        }
    } catch (const rwm::parse_error& e) {
        std::cerr << "error: " << e.what();
        if (e.line() > 0) std::cerr << " (line " << e.line() << ')';
        std::cerr << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    }
    return exit_usage;
}
