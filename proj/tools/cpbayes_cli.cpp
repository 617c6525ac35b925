#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpbayes/cpbayes.hpp"

namespace {

using namespace cpbayes;

struct CommonArgs {
    std::uint64_t seed = 1;
    std::string out;
};

struct GenerateArgs {
    int setting = 0;
    double scale = 1.0;
    std::string dims;
    std::int64_t d_star = 0;
    double ns = 0.0;
    std::int64_t n = 0;
    double sigma = 1.0;
    double sigma_p = 5.0;
    double xi = 0.5;
    std::int64_t d_max = 0;
    double R = 10.0;
};

struct FitArgs {
    std::string manifest;
    std::string observations;
    std::string dims;
    double sigma = 1.0;
    double sigma_p = 5.0;
    double xi = 0.5;
    std::int64_t d_max = 0;
    double R = 0.0;
    bool has_R = false;
    std::int64_t sweeps = 600;
    std::int64_t burn_in = -1;
    std::int64_t thin = 1;
    double rank_move_prob = 0.2;
    std::string rejection = "inf";
    std::int64_t chains = 1;
    std::int64_t init_rank = 0;
    std::vector<std::int64_t> probe_cells;
};

struct EvalArgs {
    std::string mean;
    std::string truth;
    std::string observations;
    std::int64_t d_star = 0;
};

struct ExperimentArgs {
    std::vector<int> settings = {1, 2};
    std::vector<double> ns_grid = {0.3, 0.5, 0.7, 0.9};
    int reps = 3;
    double scale = 0.5;
    std::int64_t sweeps = 600;
    std::int64_t burn_in = -1;
    std::int64_t thin = 1;
    double rank_move_prob = 0.2;
    double xi = 0.5;
    int jobs = 1;
};

struct BoundsArgs {
    int setting = 0;
    double scale = 1.0;
    double ns = 0.5;
    std::string truth;
    std::string dims;
    std::int64_t d_star = 0;
    std::int64_t n = 0;
    double frob_sq_sum = -1.0;
    double max2 = -1.0;
    double sigma_p = 5.0;
    double xi = 0.5;
    std::int64_t d_max = 0;
    double R = 0.0;
    bool has_R = false;
    bool no_R = false;
    std::vector<double> radii;
};

void cmd_generate(const GenerateArgs& args, const CommonArgs& common, const CLI::App& cmd) {
    GenerateConfig cfg;
    if (args.setting != 0) {
        const ExperimentSetting setting =
            scaled_setting(reference_setting(args.setting), args.scale);
        cfg.dims = setting.dims;
        cfg.d_star = setting.d_star;
        cfg.sigma = setting.sigma;
        cfg.sigma_p = setting.sigma_p;
        cfg.R = setting.R;
    }
    if (!args.dims.empty()) cfg.dims = parse_dims(args.dims);
    if (args.d_star > 0) cfg.d_star = args.d_star;
    if (cfg.dims.order() == 0) {
        throw config_error("generate: provide --setting or --dims");
    }
    if (cfg.d_star < 1) throw config_error("generate: provide --d-star >= 1");
    if (cmd.count("--sigma") > 0) cfg.sigma = args.sigma;
    if (cmd.count("--sigma-p") > 0) cfg.sigma_p = args.sigma_p;
    if (cmd.count("--R") > 0) cfg.R = args.R;
    cfg.ns = args.ns;
    cfg.n = args.n;
    cfg.xi = args.xi;
    cfg.d_max = args.d_max;
    cfg.seed = common.seed;

    const std::filesystem::path out_dir = common.out.empty() ? "out" : common.out;
    run_generate(cfg, out_dir);
    std::cout << "wrote " << (out_dir / "manifest.txt").string() << ", "
              << (out_dir / "truth_factors.txt").string() << ", "
              << (out_dir / "observations.csv").string() << '\n';
}

[[nodiscard]] FitConfig make_fit_config(const FitArgs& args, const CommonArgs& common) {
    FitConfig cfg;
    cfg.n_samples = args.sweeps;
    if (args.burn_in >= 0) cfg.burn_in = args.burn_in;
    cfg.thin = args.thin;
    cfg.rank_move_prob = args.rank_move_prob;
    cfg.rejection = args.rejection;
    cfg.chains = args.chains;
    cfg.seed = common.seed;
    cfg.init_rank = args.init_rank;
    cfg.probe_cells = args.probe_cells;
    return cfg;
}

void cmd_fit(const FitArgs& args, const CommonArgs& common) {
    const FitConfig cfg = make_fit_config(args, common);
    const std::filesystem::path out_dir = common.out.empty() ? "out" : common.out;
    FitResult result;
    if (!args.manifest.empty()) {
        result = run_fit(args.manifest, cfg, out_dir);
    } else {
        if (args.observations.empty() || args.dims.empty()) {
            throw config_error("fit: provide --manifest, or --observations with --dims");
        }
        const Shape dims = parse_dims(args.dims);
        Hyperparams hp;
        hp.sigma = args.sigma;
        hp.sigma_p = args.sigma_p;
        hp.xi = args.xi;
        hp.d_max = args.d_max;
        if (args.has_R) hp.R = args.R;
        hp.validate();
        auto in = detail::open_in(args.observations);
        const DesignSet design = read_observations_csv(in, dims);
        result = run_fit(design, hp, cfg, out_dir);
    }
    write_summary_stats(std::cout, result.summary);
    std::cout << "wall_s=" << format_double(result.wall_s) << '\n';
}

void cmd_eval(const EvalArgs& args, const CommonArgs& common) {
    const DenseTensor mean = read_dense_tensor(args.mean);
    const CPFactors truth = read_cp_factors(args.truth);
    if (mean.shape() != truth.shape()) {
        throw structural_error("eval: mean and truth shapes disagree");
    }
    auto in = detail::open_in(args.observations);
    const DesignSet design = read_observations_csv(in, truth.shape());
    const std::int64_t d_star = args.d_star > 0 ? args.d_star : truth.rank();
    const AccuracyRecord record = evaluate_accuracy(mean, cp_compose(truth), design, d_star);

    const auto print = [](std::ostream& out, const AccuracyRecord& r) {
        out << "n=" << r.n << '\n';
        out << "in_sample=" << format_double(r.in_sample) << '\n';
        out << "out_sample=" << format_double(r.out_sample) << '\n';
        out << "scaled_in=" << format_double(r.scaled_in) << '\n';
        out << "scaled_out=" << format_double(r.scaled_out) << '\n';
    };
    print(std::cout, record);
    if (!common.out.empty()) {
        const std::filesystem::path out_dir = common.out;
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw io_error("eval: cannot create output directory " + out_dir.string());
        auto out = detail::open_out(out_dir / "eval.txt");
        print(out, record);
    }
}

void cmd_experiment(const ExperimentArgs& args, const CommonArgs& common) {
    ExperimentConfig cfg;
    cfg.settings = args.settings;
    cfg.ns_grid = args.ns_grid;
    cfg.reps = args.reps;
    cfg.scale = args.scale;
    cfg.n_samples = args.sweeps;
    if (args.burn_in >= 0) cfg.burn_in = args.burn_in;
    cfg.thin = args.thin;
    cfg.rank_move_prob = args.rank_move_prob;
    cfg.xi = args.xi;
    cfg.seed = common.seed;
    cfg.jobs = args.jobs;

    const std::vector<AccuracyRecord> details = run_experiment(cfg);
    const std::vector<AccuracyRecord> averages = average_records(details);

    const std::filesystem::path out_dir = common.out.empty() ? "out" : common.out;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("experiment: cannot create output directory " + out_dir.string());
    {
        auto out = detail::open_out(out_dir / "results.csv");
        write_results_csv(out, details, averages);
    }
    Manifest manifest;
    std::string settings_text;
    for (int id : cfg.settings) {
        if (!settings_text.empty()) settings_text += ',';
        settings_text += std::to_string(id);
    }
    std::string ns_text;
    for (double ns : cfg.ns_grid) {
        if (!ns_text.empty()) ns_text += ',';
        ns_text += format_double(ns);
    }
    manifest["settings"] = settings_text;
    manifest["ns_grid"] = ns_text;
    manifest["reps"] = std::to_string(cfg.reps);
    manifest["scale"] = format_double(cfg.scale);
    manifest["sweeps"] = std::to_string(cfg.n_samples);
    manifest["burn_in"] = std::to_string(cfg.burn_in.value_or(cfg.n_samples));
    manifest["thin"] = std::to_string(cfg.thin);
    manifest["rank_move_prob"] = format_double(cfg.rank_move_prob);
    manifest["xi"] = format_double(cfg.xi);
    manifest["init_rank"] = "d_max";
    manifest["seed"] = std::to_string(cfg.seed);
    write_manifest(out_dir / "experiment_manifest.txt", manifest);

    std::cout << "wrote " << (out_dir / "results.csv").string() << " with " << details.size()
              << " detail rows and " << averages.size() << " average rows\n";
}

void cmd_bounds(const BoundsArgs& args, const CommonArgs& common) {
    ProblemProfile profile;
    if (args.setting != 0) {
        ExperimentSetting setting = scaled_setting(reference_setting(args.setting), args.scale);
        if (args.has_R) setting.R = args.R;
        profile = setting_profile(setting, args.ns, args.xi, common.seed);
        if (args.n > 0) profile.n = args.n;
        if (args.sigma_p != 5.0) profile.hp.sigma_p = args.sigma_p;
        if (args.d_max > 0) profile.hp.d_max = args.d_max;
        if (args.no_R) profile.hp.R.reset();
    } else if (!args.truth.empty()) {
        const CPFactors truth = read_cp_factors(args.truth);
        if (args.n < 1) throw config_error("bounds: provide --n with --truth");
        Hyperparams hp;
        hp.sigma_p = args.sigma_p;
        hp.xi = args.xi;
        hp.d_max = args.d_max > 0 ? args.d_max : 2 * std::max<std::int64_t>(truth.rank(), 1);
        if (args.has_R) hp.R = args.R;
        profile = make_profile(truth, args.n, hp);
    } else {
        if (args.dims.empty() || args.d_star < 1 || args.n < 1 || args.frob_sq_sum < 0.0 ||
            args.max2 < 0.0) {
            throw config_error(
                "bounds: provide --setting, --truth, or the full profile "
                "(--dims --d-star --n --frob-sq-sum --max2)");
        }
        profile.dims = parse_dims(args.dims);
        profile.n = args.n;
        profile.d_star = args.d_star;
        profile.frob_sq_sum = args.frob_sq_sum;
        profile.max2 = args.max2;
        profile.hp.sigma_p = args.sigma_p;
        profile.hp.xi = args.xi;
        profile.hp.d_max = args.d_max > 0 ? args.d_max : 2 * args.d_star;
        if (args.has_R) profile.hp.R = args.R;
        profile.validate();
    }

    const BoundReport report = theorem_bounds(profile, args.radii);
    if (common.out.empty()) {
        write_bounds_csv(std::cout, profile, report);
    } else {
        const std::filesystem::path out_dir = common.out;
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw io_error("bounds: cannot create output directory " + out_dir.string());
        auto out = detail::open_out(out_dir / "bounds.csv");
        write_bounds_csv(out, profile, report);
        std::cout << "wrote " << (out_dir / "bounds.csv").string() << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian low-rank tensor regression: sampling, bounds, and benchmarks"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value configuration file");

    CommonArgs common;
    app.add_option("--seed", common.seed, "Master RNG seed");
    app.add_option("--out", common.out, "Output directory");

    GenerateArgs gen_args;
    CLI::App* gen = app.add_subcommand("generate", "Draw a synthetic truth and observations");
    gen->configurable();
    gen->add_option("--setting", gen_args.setting, "Benchmark setting id (1-5)");
    gen->add_option("--scale", gen_args.scale, "Shrink factor for dims and rank");
    gen->add_option("--dims", gen_args.dims, "Tensor dimensions, e.g. 10x10x10");
    gen->add_option("--d-star", gen_args.d_star, "True rank");
    gen->add_option("--ns", gen_args.ns, "Observations as a fraction of cells");
    gen->add_option("--n", gen_args.n, "Explicit observation count (overrides --ns)");
    gen->add_option("--sigma", gen_args.sigma, "Noise standard deviation");
    gen->add_option("--sigma-p", gen_args.sigma_p, "Prior scale");
    gen->add_option("--xi", gen_args.xi, "Rank-penalty base in (0,1)");
    gen->add_option("--d-max", gen_args.d_max, "Maximum rank (0 selects 2 d*)");
    gen->add_option("--R", gen_args.R, "Rejection radius recorded in the manifest");
    gen->add_option("--seed", common.seed, "Master RNG seed");
    gen->add_option("--out", common.out, "Output directory");
    gen->callback([&] { cmd_generate(gen_args, common, *gen); });

    FitArgs fit_args;
    CLI::App* fit = app.add_subcommand("fit", "Sample the posterior and write its mean");
    fit->configurable();
    fit->add_option("--manifest", fit_args.manifest, "Manifest from generate");
    fit->add_option("--observations", fit_args.observations, "Observations CSV");
    fit->add_option("--dims", fit_args.dims, "Tensor dimensions when no manifest is given");
    fit->add_option("--sigma", fit_args.sigma, "Noise standard deviation");
    fit->add_option("--sigma-p", fit_args.sigma_p, "Prior scale");
    fit->add_option("--xi", fit_args.xi, "Rank-penalty base in (0,1)");
    fit->add_option("--d-max", fit_args.d_max, "Maximum rank");
    fit->add_option("--R", fit_args.R, "Rejection radius")->each([&](const std::string&) {
        fit_args.has_R = true;
    });
    fit->add_option("--sweeps", fit_args.sweeps, "Retained draws per chain");
    fit->add_option("--burn-in", fit_args.burn_in, "Burn-in sweeps (default: sweeps)");
    fit->add_option("--thin", fit_args.thin, "Keep every thin-th draw");
    fit->add_option("--rank-move-prob", fit_args.rank_move_prob, "Rank move probability");
    fit->add_option("--rejection", fit_args.rejection, "none, inf, or max");
    fit->add_option("--chains", fit_args.chains, "Independent chains to merge");
    fit->add_option("--init-rank", fit_args.init_rank, "Initial rank (0 selects min(2, d_max))");
    fit->add_option("--probe-cells", fit_args.probe_cells, "Flat cell offsets to track")
        ->delimiter(',');
    fit->add_option("--seed", common.seed, "Master RNG seed");
    fit->add_option("--out", common.out, "Output directory");
    fit->callback([&] { cmd_fit(fit_args, common); });

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Score a posterior mean against the truth");
    eval->configurable();
    eval->add_option("--mean", eval_args.mean, "Posterior mean tensor file")->required();
    eval->add_option("--truth", eval_args.truth, "True factors file")->required();
    eval->add_option("--observations", eval_args.observations, "Fitting design CSV")->required();
    eval->add_option("--d-star", eval_args.d_star, "Rank used in the scaling (default: truth)");
    eval->add_option("--out", common.out, "Output directory");
    eval->callback([&] { cmd_eval(eval_args, common); });

    ExperimentArgs exp_args;
    CLI::App* exp = app.add_subcommand("experiment", "Scaled-accuracy benchmark sweep");
    exp->configurable();
    exp->add_option("--settings", exp_args.settings, "Benchmark setting ids")->delimiter(',');
    exp->add_option("--ns-grid", exp_args.ns_grid, "Observation fractions")->delimiter(',');
    exp->add_option("--reps", exp_args.reps, "Repetitions per cell");
    exp->add_option("--scale", exp_args.scale, "Shrink factor for dims and rank");
    exp->add_option("--sweeps", exp_args.sweeps, "Retained draws per fit");
    exp->add_option("--burn-in", exp_args.burn_in, "Burn-in sweeps (default: sweeps)");
    exp->add_option("--thin", exp_args.thin, "Keep every thin-th draw");
    exp->add_option("--rank-move-prob", exp_args.rank_move_prob, "Rank move probability");
    exp->add_option("--xi", exp_args.xi, "Rank-penalty base in (0,1)");
    exp->add_option("--jobs", exp_args.jobs, "Worker threads for independent cells");
    exp->add_option("--seed", common.seed, "Master RNG seed");
    exp->add_option("--out", common.out, "Output directory");
    exp->callback([&] { cmd_experiment(exp_args, common); });

    BoundsArgs bounds_args;
    CLI::App* bounds = app.add_subcommand("bounds", "Evaluate the theoretical rate bounds");
    bounds->configurable();
    bounds->add_option("--setting", bounds_args.setting, "Benchmark setting id (1-5)");
    bounds->add_option("--scale", bounds_args.scale, "Shrink factor for dims and rank");
    bounds->add_option("--ns", bounds_args.ns, "Observation fraction for the profile");
    bounds->add_option("--truth", bounds_args.truth, "True factors file");
    bounds->add_option("--dims", bounds_args.dims, "Tensor dimensions for an explicit profile");
    bounds->add_option("--d-star", bounds_args.d_star, "True rank");
    bounds->add_option("--n", bounds_args.n, "Sample size");
    bounds->add_option("--frob-sq-sum", bounds_args.frob_sq_sum,
                       "Sum of squared factor Frobenius norms");
    bounds->add_option("--max2", bounds_args.max2, "Largest factor column 2-norm");
    bounds->add_option("--sigma-p", bounds_args.sigma_p, "Prior scale");
    bounds->add_option("--xi", bounds_args.xi, "Rank-penalty base in (0,1)");
    bounds->add_option("--d-max", bounds_args.d_max, "Maximum rank (0 selects 2 d*)");
    bounds->add_option("--R", bounds_args.R, "Rejection radius")->each([&](const std::string&) {
        bounds_args.has_R = true;
    });
    bounds->add_flag("--no-R", bounds_args.no_R, "Drop the radius: in-sample rate only");
    bounds->add_option("--radii", bounds_args.radii, "Extra prior-mass bound radii")
        ->delimiter(',');
    bounds->add_option("--seed", common.seed, "Master RNG seed");
    bounds->add_option("--out", common.out, "Output directory");
    bounds->callback([&] { cmd_bounds(bounds_args, common); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const cpbayes::io_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const cpbayes::estimation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
