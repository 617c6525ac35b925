#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cpbayes/bounds.hpp"
#include "cpbayes/design.hpp"
#include "cpbayes/io.hpp"
#include "cpbayes/sampler.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

// ---------------------------------------------------------------------------
// Benchmark settings
// ---------------------------------------------------------------------------

/// One completion benchmark configuration: tensor sizes, true rank, and the
/// fixed prior scale, rejection radius, and noise level of the protocol.
struct ExperimentSetting {
    int id = 0;
    Shape dims;
    std::int64_t d_star = 1;
    double sigma_p = 5.0;
    double R = 10.0;
    double sigma = 1.0;
};

/// The five benchmark settings at full scale.
[[nodiscard]] inline const std::vector<ExperimentSetting>& reference_settings() {
    static const std::vector<ExperimentSetting> settings = {
        {1, Shape({10, 10, 10}), 4},
        {2, Shape({10, 10, 40}), 5},
        {3, Shape({20, 20, 30}), 8},
        {4, Shape({20, 30, 40}), 5},
        {5, Shape({30, 30, 40}), 6},
    };
    return settings;
}

[[nodiscard]] inline const ExperimentSetting& reference_setting(int id) {
    for (const ExperimentSetting& s : reference_settings()) {
        if (s.id == id) return s;
    }
    throw validation_error("reference_setting: id must be in 1..5");
}

/// Shrinks a setting for desk-scale runs: every dimension and the true
/// rank are multiplied by `scale` and rounded up.
[[nodiscard]] inline ExperimentSetting scaled_setting(const ExperimentSetting& setting,
                                                      double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw validation_error("scaled_setting: scale must be positive and finite");
    }
    ExperimentSetting out = setting;
    std::vector<std::int64_t> dims;
    dims.reserve(static_cast<std::size_t>(setting.dims.order()));
    for (std::int64_t m : setting.dims.dims()) {
        dims.push_back(static_cast<std::int64_t>(std::ceil(static_cast<double>(m) * scale)));
    }
    out.dims = Shape(dims);
    out.d_star = static_cast<std::int64_t>(std::ceil(static_cast<double>(setting.d_star) * scale));
    return out;
}

/// True factors with entries uniform on [-1, 1].
[[nodiscard]] inline CPFactors generate_truth_factors(const Shape& shape, std::int64_t d_star,
                                                      Rng& rng) {
    if (d_star < 1) throw validation_error("generate_truth_factors: rank must be >= 1");
    std::vector<Eigen::MatrixXd> factors(static_cast<std::size_t>(shape.order()));
    for (int k = 0; k < shape.order(); ++k) {
        Eigen::MatrixXd u(d_star, shape.dim(k));
        for (std::int64_t r = 0; r < d_star; ++r) {
            for (std::int64_t j = 0; j < shape.dim(k); ++j) {
                u(r, j) = 2.0 * draw_uniform(rng) - 1.0;
            }
        }
        factors[static_cast<std::size_t>(k)] = std::move(u);
    }
    return CPFactors(shape, std::move(factors));
}

[[nodiscard]] inline std::string dims_to_string(const Shape& shape) {
    std::string out;
    for (std::int64_t m : shape.dims()) {
        if (!out.empty()) out += 'x';
        out += std::to_string(m);
    }
    return out;
}

[[nodiscard]] inline Shape parse_dims(const std::string& text) {
    std::string normalized = text;
    std::replace(normalized.begin(), normalized.end(), ',', 'x');
    std::vector<std::int64_t> dims;
    for (const std::string& part : detail::split(normalized, 'x')) {
        dims.push_back(detail::parse_int(part, "dims"));
    }
    try {
        return Shape(dims);
    } catch (const structural_error& e) {
        throw validation_error(std::string("dims: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateConfig {
    Shape dims;
    std::int64_t d_star = 1;
    double ns = 0.0;     ///< observations as a fraction of the cell count
    std::int64_t n = 0;  ///< explicit observation count; overrides ns when > 0
    double sigma = 1.0;
    double sigma_p = 5.0;
    double xi = 0.5;
    std::int64_t d_max = 0;  ///< 0 selects the synthetic default 2 d*
    double R = 10.0;
    std::uint64_t seed = 1;

    [[nodiscard]] std::int64_t resolve_n() const {
        const std::int64_t resolved =
            n > 0 ? n
                  : static_cast<std::int64_t>(
                        std::llround(ns * static_cast<double>(dims.total())));
        if (resolved < 1) {
            throw validation_error("generate: need n >= 1 (set n or a larger ns)");
        }
        return resolved;
    }
    [[nodiscard]] std::int64_t resolve_d_max() const { return d_max > 0 ? d_max : 2 * d_star; }
};

struct GenerateResult {
    CPFactors truth;
    DesignSet design;
    Manifest manifest;
};

/// Draws the truth and a completion design with Gaussian responses.  All
/// draws come from the one engine in a fixed order, so a seed pins the
/// entire dataset.
[[nodiscard]] inline GenerateResult generate_dataset(const GenerateConfig& cfg) {
    const std::int64_t n = cfg.resolve_n();
    Rng rng(cfg.seed);
    CPFactors truth = generate_truth_factors(cfg.dims, cfg.d_star, rng);
    const std::vector<SparseMeasurement> xs = make_completion_design(cfg.dims, n, rng);
    DesignSet design = generate_responses(truth, xs, NoiseSpec(cfg.sigma), rng);

    Manifest manifest;
    manifest["dims"] = dims_to_string(cfg.dims);
    manifest["d_star"] = std::to_string(cfg.d_star);
    manifest["n"] = std::to_string(n);
    if (cfg.ns > 0.0) manifest["ns"] = format_double(cfg.ns);
    manifest["sigma"] = format_double(cfg.sigma);
    manifest["sigma_p"] = format_double(cfg.sigma_p);
    manifest["xi"] = format_double(cfg.xi);
    manifest["d_max"] = std::to_string(cfg.resolve_d_max());
    manifest["R"] = format_double(cfg.R);
    manifest["seed"] = std::to_string(cfg.seed);
    manifest["design"] = "completion";
    manifest["truth_file"] = "truth_factors.txt";
    manifest["observations_file"] = "observations.csv";
    return GenerateResult{std::move(truth), std::move(design), std::move(manifest)};
}

/// Writes truth factors, observations, and the manifest into out_dir.
inline void run_generate(const GenerateConfig& cfg, const std::filesystem::path& out_dir) {
    const GenerateResult result = generate_dataset(cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("generate: cannot create output directory " + out_dir.string());
    write_cp_factors(out_dir / "truth_factors.txt", result.truth);
    {
        auto out = detail::open_out(out_dir / "observations.csv");
        write_observations_csv(out, result.design);
    }
    write_manifest(out_dir / "manifest.txt", result.manifest);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitConfig {
    std::int64_t n_samples = 600;
    std::optional<std::int64_t> burn_in;  ///< default: n_samples
    std::int64_t thin = 1;
    double rank_move_prob = 0.2;
    std::string rejection = "inf";  ///< none | inf | max
    std::int64_t chains = 1;
    std::uint64_t seed = 1;
    std::int64_t init_rank = 0;  ///< 0: default min(2, d_max)
    std::vector<std::int64_t> probe_cells;

    [[nodiscard]] Rejection resolve_rejection(const Hyperparams& hp) const {
        if (rejection == "none") return Rejection::none();
        if (!hp.R) {
            throw config_error("fit: rejection '" + rejection + "' needs a radius R");
        }
        if (rejection == "inf") return Rejection::infinity_norm(*hp.R);
        if (rejection == "max") return Rejection::max_norm(*hp.R);
        throw validation_error("fit: unknown rejection kind '" + rejection + "'");
    }
};

struct FitResult {
    PosteriorSummary summary;
    double wall_s = 0.0;
};

/// Runs one or more chains with derived per-chain seeds and merges them.
[[nodiscard]] inline FitResult fit_posterior_mean(const DesignSet& design, const Hyperparams& hp,
                                                  const FitConfig& cfg,
                                                  const DrawObserver& observer = {}) {
    if (cfg.chains < 1) throw validation_error("fit: chains must be >= 1");
    ChainConfig chain_cfg;
    chain_cfg.n_samples = cfg.n_samples;
    chain_cfg.burn_in = cfg.burn_in;
    chain_cfg.thin = cfg.thin;
    chain_cfg.rank_move_prob = cfg.rank_move_prob;
    chain_cfg.rejection = cfg.resolve_rejection(hp);
    chain_cfg.probe_cells = cfg.probe_cells;

    const auto start = std::chrono::steady_clock::now();
    std::vector<PosteriorSummary> parts;
    parts.reserve(static_cast<std::size_t>(cfg.chains));
    for (std::int64_t c = 0; c < cfg.chains; ++c) {
        const std::uint64_t chain_seed =
            cfg.chains == 1 ? cfg.seed : derive_seed(cfg.seed, {static_cast<std::uint64_t>(c)});
        SamplerState state = make_initial_state(design.shape(), hp, chain_seed, cfg.init_rank);
        parts.push_back(run_chain(design, hp, chain_cfg, std::move(state), observer));
    }
    FitResult result{cfg.chains == 1 ? std::move(parts[0]) : merge_summaries(parts), 0.0};
    result.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

/// Runs the chains and writes the mean tensor, rank histogram, and scalar
/// diagnostics into out_dir.
inline FitResult run_fit(const DesignSet& design, const Hyperparams& hp, const FitConfig& cfg,
                         const std::filesystem::path& out_dir) {
    FitResult result = fit_posterior_mean(design, hp, cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("fit: cannot create output directory " + out_dir.string());
    if (result.summary.mean) {
        write_dense_tensor(out_dir / "posterior_mean.txt", *result.summary.mean);
    }
    {
        auto out = detail::open_out(out_dir / "rank_histogram.csv");
        write_rank_histogram_csv(out, result.summary);
    }
    {
        auto out = detail::open_out(out_dir / "fit_stats.txt");
        write_summary_stats(out, result.summary);
        out << "wall_s=" << format_double(result.wall_s) << '\n';
    }
    return result;
}

/// Reads hyperparameters from a generate manifest.
[[nodiscard]] inline Hyperparams manifest_hyperparams(const Manifest& manifest) {
    Hyperparams hp;
    hp.sigma = detail::parse_double(manifest_get(manifest, "sigma"), "manifest sigma");
    hp.sigma_p = detail::parse_double(manifest_get(manifest, "sigma_p"), "manifest sigma_p");
    hp.xi = detail::parse_double(manifest_get(manifest, "xi"), "manifest xi");
    hp.d_max = detail::parse_int(manifest_get(manifest, "d_max"), "manifest d_max");
    if (manifest.count("R")) {
        hp.R = detail::parse_double(manifest.at("R"), "manifest R");
    }
    hp.validate();
    return hp;
}

/// Fit driver over files: the manifest supplies the hyperparameters and the
/// observation file location, so no further flags are needed.
inline FitResult run_fit(const std::filesystem::path& manifest_path, const FitConfig& cfg,
                         const std::filesystem::path& out_dir) {
    const Manifest manifest = read_manifest(manifest_path);
    const std::filesystem::path base = manifest_path.parent_path();
    const Shape dims = parse_dims(manifest_get(manifest, "dims"));
    const Hyperparams hp = manifest_hyperparams(manifest);
    auto obs = detail::open_in(base / manifest_get(manifest, "observations_file"));
    const DesignSet design = read_observations_csv(obs, dims);
    return run_fit(design, hp, cfg, out_dir);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct AccuracyRecord {
    int setting = 0;
    double ns = 0.0;
    int rep = 0;  ///< -1 marks a per-(setting, ns) average row
    std::int64_t n = 0;
    double in_sample = 0.0;
    double out_sample = 0.0;
    double scaled_in = 0.0;
    double scaled_out = 0.0;
    std::int64_t rank_mode = 0;
    double wall_s = 0.0;
    std::string error;
};

/// Degrees-of-freedom normalization prod_k M_k / (d* sum_k M_k) applied to
/// the raw errors.
[[nodiscard]] inline double accuracy_scale_factor(const Shape& dims, std::int64_t d_star) {
    if (d_star < 1) throw validation_error("accuracy_scale_factor: d_star must be >= 1");
    return static_cast<double>(dims.total()) /
           (static_cast<double>(d_star) * static_cast<double>(dims.dim_sum()));
}

/// In-sample error on the fitting design, uniform out-of-sample error, and
/// their scaled variants.
[[nodiscard]] inline AccuracyRecord evaluate_accuracy(const DenseTensor& mean,
                                                      const DenseTensor& truth,
                                                      const DesignSet& design,
                                                      std::int64_t d_star) {
    AccuracyRecord record;
    record.n = design.size();
    record.in_sample = empirical_sq_norm(mean, truth, design);
    record.out_sample = population_sq_norm_uniform(mean, truth);
    const double scale = accuracy_scale_factor(mean.shape(), d_star);
    record.scaled_in = record.in_sample * scale;
    record.scaled_out = record.out_sample * scale;
    return record;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::vector<int> settings = {1, 2};
    std::vector<double> ns_grid = {0.3, 0.5, 0.7, 0.9};
    int reps = 3;
    double scale = 0.5;  ///< 1.0 reproduces the full-size protocol
    std::int64_t n_samples = 600;
    std::optional<std::int64_t> burn_in;
    std::int64_t thin = 1;
    double rank_move_prob = 0.2;
    double xi = 0.5;
    std::uint64_t seed = 1;
    int jobs = 1;

    void validate() const {
        if (settings.empty()) throw validation_error("experiment: no settings selected");
        if (ns_grid.empty()) throw validation_error("experiment: empty ns grid");
        for (double ns : ns_grid) {
            if (!(ns > 0.0) || !std::isfinite(ns)) {
                throw validation_error("experiment: ns values must be positive");
            }
        }
        if (reps < 1) throw validation_error("experiment: reps must be >= 1");
        if (jobs < 1) throw validation_error("experiment: jobs must be >= 1");
    }
};

namespace detail {

/// Stable per-cell seed: mixes the master seed with the setting id, the
/// bit pattern of n_s, and the repetition index.
[[nodiscard]] inline std::uint64_t cell_seed(std::uint64_t master, int setting, double ns,
                                             int rep) {
    return derive_seed(master, {static_cast<std::uint64_t>(setting),
                                std::bit_cast<std::uint64_t>(ns),
                                static_cast<std::uint64_t>(rep)});
}

}  // namespace detail

/// Runs one experiment cell: generate, fit with sup-norm rejection at the
/// setting's radius, evaluate.  Chains start at rank d_max so every rank the
/// posterior favors is reachable by death moves; with data present, birth
/// moves that insert a fresh prior row are effectively never accepted, so
/// ranks above the initial one are unreachable.  Failures are recorded, not
/// thrown.
[[nodiscard]] inline AccuracyRecord run_experiment_cell(const ExperimentSetting& setting,
                                                        double ns, int rep,
                                                        const ExperimentConfig& cfg) {
    AccuracyRecord record;
    record.setting = setting.id;
    record.ns = ns;
    record.rep = rep;
    try {
        GenerateConfig gen;
        gen.dims = setting.dims;
        gen.d_star = setting.d_star;
        gen.ns = ns;
        gen.sigma = setting.sigma;
        gen.sigma_p = setting.sigma_p;
        gen.xi = cfg.xi;
        gen.R = setting.R;
        gen.seed = detail::cell_seed(cfg.seed, setting.id, ns, rep);
        const GenerateResult data = generate_dataset(gen);

        Hyperparams hp;
        hp.sigma = setting.sigma;
        hp.sigma_p = setting.sigma_p;
        hp.xi = cfg.xi;
        hp.d_max = gen.resolve_d_max();
        hp.R = setting.R;

        FitConfig fit;
        fit.n_samples = cfg.n_samples;
        fit.burn_in = cfg.burn_in;
        fit.thin = cfg.thin;
        fit.rank_move_prob = cfg.rank_move_prob;
        fit.rejection = "inf";
        fit.seed = derive_seed(gen.seed, {0x5eedU});
        fit.init_rank = hp.d_max;
        const FitResult result = fit_posterior_mean(data.design, hp, fit);

        const DenseTensor truth = cp_compose(data.truth);
        const AccuracyRecord metrics =
            evaluate_accuracy(*result.summary.mean, truth, data.design, setting.d_star);
        record.n = metrics.n;
        record.in_sample = metrics.in_sample;
        record.out_sample = metrics.out_sample;
        record.scaled_in = metrics.scaled_in;
        record.scaled_out = metrics.scaled_out;
        record.rank_mode = posterior_rank_mode(result.summary);
        record.wall_s = result.wall_s;
    } catch (const std::exception& e) {
        record.error = e.what();
    }
    return record;
}

/// Full cross product (setting, ns, rep) in deterministic order.  Cells are
/// independent jobs; with jobs > 1 they run on a small worker pool while
/// results land in preassigned slots.
[[nodiscard]] inline std::vector<AccuracyRecord> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    struct Cell {
        ExperimentSetting setting;
        double ns;
        int rep;
    };
    std::vector<Cell> cells;
    for (int id : cfg.settings) {
        const ExperimentSetting setting = scaled_setting(reference_setting(id), cfg.scale);
        for (double ns : cfg.ns_grid) {
            for (int rep = 0; rep < cfg.reps; ++rep) cells.push_back({setting, ns, rep});
        }
    }
    std::vector<AccuracyRecord> records(cells.size());
    if (cfg.jobs == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            records[i] = run_experiment_cell(cells[i].setting, cells[i].ns, cells[i].rep, cfg);
        }
        return records;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            records[i] = run_experiment_cell(cells[i].setting, cells[i].ns, cells[i].rep, cfg);
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), cells.size());
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    return records;
}

/// Arithmetic means over the non-failed repetitions of each (setting, ns),
/// appended as rep = -1 rows.  rank_mode takes the most frequent value.
[[nodiscard]] inline std::vector<AccuracyRecord> average_records(
    std::span<const AccuracyRecord> records) {
    std::map<std::pair<int, double>, std::vector<const AccuracyRecord*>> groups;
    for (const AccuracyRecord& r : records) groups[{r.setting, r.ns}].push_back(&r);
    std::vector<AccuracyRecord> averages;
    averages.reserve(groups.size());
    for (const auto& [key, members] : groups) {
        AccuracyRecord avg;
        avg.setting = key.first;
        avg.ns = key.second;
        avg.rep = -1;
        std::int64_t successes = 0;
        std::map<std::int64_t, int> mode_votes;
        for (const AccuracyRecord* r : members) {
            if (!r->error.empty()) continue;
            ++successes;
            avg.n = r->n;
            avg.in_sample += r->in_sample;
            avg.out_sample += r->out_sample;
            avg.scaled_in += r->scaled_in;
            avg.scaled_out += r->scaled_out;
            avg.wall_s += r->wall_s;
            ++mode_votes[r->rank_mode];
        }
        if (successes == 0) {
            avg.error = "all repetitions failed";
        } else {
            const double inv = 1.0 / static_cast<double>(successes);
            avg.in_sample *= inv;
            avg.out_sample *= inv;
            avg.scaled_in *= inv;
            avg.scaled_out *= inv;
            avg.wall_s *= inv;
            int best = 0;
            for (const auto& [rank, votes] : mode_votes) {
                if (votes > best) {
                    best = votes;
                    avg.rank_mode = rank;
                }
            }
        }
        averages.push_back(std::move(avg));
    }
    return averages;
}

inline void write_results_csv(std::ostream& out, std::span<const AccuracyRecord> details,
                              std::span<const AccuracyRecord> averages) {
    out << "setting,ns,rep,n,in_sample,out_sample,scaled_in,scaled_out,rank_mode,wall_s,error\n";
    const auto row = [&out](const AccuracyRecord& r) {
        std::string error = r.error;
        std::replace(error.begin(), error.end(), ',', ';');
        out << r.setting << ',' << format_double(r.ns) << ','
            << (r.rep < 0 ? std::string("avg") : std::to_string(r.rep)) << ',' << r.n << ','
            << format_double(r.in_sample) << ',' << format_double(r.out_sample) << ','
            << format_double(r.scaled_in) << ',' << format_double(r.scaled_out) << ','
            << r.rank_mode << ',' << format_double(r.wall_s) << ',' << error << '\n';
    };
    for (const AccuracyRecord& r : details) row(r);
    for (const AccuracyRecord& r : averages) row(r);
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

inline void write_bounds_csv(std::ostream& out, const ProblemProfile& profile,
                             const BoundReport& report) {
    out << "dims,n,d_star,sigma_p,xi,d_max,R,frob_sq_sum,max2,"
           "xi_at_1,xi_at_sqrt_c_eps,c_nk,c_eps,rate_in_sample,rate_out_infinity,rate_out_max\n";
    out << dims_to_string(profile.dims) << ',' << profile.n << ',' << profile.d_star << ','
        << format_double(profile.hp.sigma_p) << ',' << format_double(profile.hp.xi) << ','
        << profile.hp.d_max << ',' << (profile.hp.R ? format_double(*profile.hp.R) : "") << ','
        << format_double(profile.frob_sq_sum) << ',' << format_double(profile.max2) << ','
        << format_double(report.xi_values[0].second) << ','
        << format_double(report.xi_values[1].second) << ',' << format_double(report.c_nk) << ','
        << format_double(report.c_eps) << ',' << format_double(report.rate_in_sample) << ','
        << (report.rate_out_infinity ? format_double(*report.rate_out_infinity) : "") << ','
        << (report.rate_out_max ? format_double(*report.rate_out_max) : "") << '\n';
}

/// Synthetic profile for a benchmark setting: the truth is drawn from the
/// setting's generator at the given seed, and n = round(ns prod_k M_k).
[[nodiscard]] inline ProblemProfile setting_profile(const ExperimentSetting& setting, double ns,
                                                    double xi, std::uint64_t seed) {
    Rng rng(seed);
    const CPFactors truth = generate_truth_factors(setting.dims, setting.d_star, rng);
    Hyperparams hp;
    hp.sigma = setting.sigma;
    hp.sigma_p = setting.sigma_p;
    hp.xi = xi;
    hp.d_max = 2 * setting.d_star;
    hp.R = setting.R;
    const auto n = static_cast<std::int64_t>(
        std::llround(ns * static_cast<double>(setting.dims.total())));
    return make_profile(truth, std::max<std::int64_t>(n, 1), hp);
}

}  // namespace cpbayes
