#pragma once

#include <Eigen/Dense>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cpbayes/cp_factors.hpp"
#include "cpbayes/dense_tensor.hpp"
#include "cpbayes/design.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/sampler.hpp"
#include "cpbayes/shape.hpp"

namespace cpbayes {

/// Shortest round-tripping decimal rendering used by every writer.
[[nodiscard]] inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

[[nodiscard]] inline double parse_double(const std::string& text, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        throw io_error(where + ": expected a number, got '" + text + "'");
    }
    return v;
}

[[nodiscard]] inline std::int64_t parse_int(const std::string& text, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        throw io_error(where + ": expected an integer, got '" + text + "'");
    }
    return v;
}

[[nodiscard]] inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

/// Strips a trailing carriage return so CRLF files parse.
inline void chomp(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

[[nodiscard]] inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    return out;
}

[[nodiscard]] inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open for reading: " + path.string());
    return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense tensor text format: "K M_1 ... M_K" then one value per line in
// canonical cell order.
// ---------------------------------------------------------------------------

inline void write_dense_tensor(std::ostream& out, const DenseTensor& a) {
    out << a.shape().order();
    for (std::int64_t m : a.shape().dims()) out << ' ' << m;
    out << '\n';
    for (double v : a.values()) out << format_double(v) << '\n';
}

[[nodiscard]] inline DenseTensor read_dense_tensor(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw io_error("dense tensor: missing header");
    detail::chomp(line);
    std::istringstream header(line);
    std::int64_t order = 0;
    if (!(header >> order) || order < 2) throw io_error("dense tensor: bad order in header");
    std::vector<std::int64_t> dims(static_cast<std::size_t>(order));
    for (auto& m : dims) {
        if (!(header >> m)) throw io_error("dense tensor: truncated header");
    }
    try {
        const Shape shape(dims);
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(shape.total()));
        double v = 0.0;
        while (in >> v) values.push_back(v);
        if (static_cast<std::int64_t>(values.size()) != shape.total()) {
            throw io_error("dense tensor: expected " + std::to_string(shape.total()) +
                           " values, got " + std::to_string(values.size()));
        }
        return DenseTensor(shape, std::move(values));
    } catch (const structural_error& e) {
        throw io_error(std::string("dense tensor: ") + e.what());
    } catch (const validation_error& e) {
        throw io_error(std::string("dense tensor: ") + e.what());
    }
}

inline void write_dense_tensor(const std::filesystem::path& path, const DenseTensor& a) {
    auto out = detail::open_out(path);
    write_dense_tensor(out, a);
    if (!out) throw io_error("write failed: " + path.string());
}

[[nodiscard]] inline DenseTensor read_dense_tensor(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_dense_tensor(in);
}

// ---------------------------------------------------------------------------
// CP factors text format: "K d M_1 ... M_K" then K row-major blocks, one
// row per component.
// ---------------------------------------------------------------------------

inline void write_cp_factors(std::ostream& out, const CPFactors& factors) {
    const Shape& shape = factors.shape();
    out << shape.order() << ' ' << factors.rank();
    for (std::int64_t m : shape.dims()) out << ' ' << m;
    out << '\n';
    for (int k = 0; k < shape.order(); ++k) {
        const Eigen::MatrixXd& u = factors.factor(k);
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
            for (Eigen::Index j = 0; j < u.cols(); ++j) {
                if (j > 0) out << ' ';
                out << format_double(u(r, j));
            }
            out << '\n';
        }
    }
}

[[nodiscard]] inline CPFactors read_cp_factors(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw io_error("cp factors: missing header");
    detail::chomp(line);
    std::istringstream header(line);
    std::int64_t order = 0;
    std::int64_t rank = 0;
    if (!(header >> order >> rank) || order < 2 || rank < 0) {
        throw io_error("cp factors: bad header");
    }
    std::vector<std::int64_t> dims(static_cast<std::size_t>(order));
    for (auto& m : dims) {
        if (!(header >> m)) throw io_error("cp factors: truncated header");
    }
    try {
        const Shape shape(dims);
        std::vector<Eigen::MatrixXd> factors;
        factors.reserve(static_cast<std::size_t>(order));
        for (std::int64_t k = 0; k < order; ++k) {
            Eigen::MatrixXd u(rank, dims[static_cast<std::size_t>(k)]);
            for (Eigen::Index r = 0; r < u.rows(); ++r) {
                for (Eigen::Index j = 0; j < u.cols(); ++j) {
                    if (!(in >> u(r, j))) throw io_error("cp factors: truncated factor block");
                }
            }
            factors.push_back(std::move(u));
        }
        return CPFactors(shape, std::move(factors));
    } catch (const structural_error& e) {
        throw io_error(std::string("cp factors: ") + e.what());
    } catch (const validation_error& e) {
        throw io_error(std::string("cp factors: ") + e.what());
    }
}

inline void write_cp_factors(const std::filesystem::path& path, const CPFactors& factors) {
    auto out = detail::open_out(path);
    write_cp_factors(out, factors);
    if (!out) throw io_error("write failed: " + path.string());
}

[[nodiscard]] inline CPFactors read_cp_factors(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_cp_factors(in);
}

// ---------------------------------------------------------------------------
// Observations.  Single-entry measurements use one CSV
// ("j1,...,jK,weight,y", 0-based indices); general measurements use a
// measurement file ("mid,j1,...,jK,weight") plus a response file ("mid,y").
// ---------------------------------------------------------------------------

inline void write_observations_csv(std::ostream& out, const DesignSet& design) {
    const int order = design.shape().order();
    for (int k = 1; k <= order; ++k) out << 'j' << k << ',';
    out << "weight,y\n";
    for (const Observation& obs : design) {
        if (obs.x.n_entries() != 1) {
            throw unsupported_error(
                "write_observations_csv: multi-entry measurement; use the mid-keyed format");
        }
        for (std::int64_t v : obs.x.index(0)) out << v << ',';
        out << format_double(obs.x.weight(0)) << ',' << format_double(obs.y) << '\n';
    }
}

[[nodiscard]] inline DesignSet read_observations_csv(std::istream& in, const Shape& shape) {
    const auto order = static_cast<std::size_t>(shape.order());
    std::string line;
    if (!std::getline(in, line)) throw io_error("observations: missing header");
    std::vector<Observation> observations;
    std::vector<SparseMeasurement> measurements;
    std::vector<double> responses;
    std::int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        detail::chomp(line);
        if (line.empty()) continue;
        const std::string where = "observations line " + std::to_string(line_no);
        const std::vector<std::string> fields = detail::split(line, ',');
        if (fields.size() != order + 2) throw io_error(where + ": wrong field count");
        MultiIndex index(order);
        for (std::size_t k = 0; k < order; ++k) index[k] = detail::parse_int(fields[k], where);
        const double weight = detail::parse_double(fields[order], where);
        const double y = detail::parse_double(fields[order + 1], where);
        try {
            measurements.emplace_back(shape,
                                      std::vector<SparseMeasurement::Entry>{{index, weight}});
        } catch (const structural_error& e) {
            throw io_error(where + ": " + e.what());
        }
        responses.push_back(y);
    }
    try {
        const DesignKind kind = detect_design_kind(measurements);
        observations.reserve(measurements.size());
        for (std::size_t i = 0; i < measurements.size(); ++i) {
            observations.push_back({std::move(measurements[i]), responses[i]});
        }
        return DesignSet(shape, std::move(observations), kind);
    } catch (const validation_error& e) {
        throw io_error(std::string("observations: ") + e.what());
    }
}

inline void write_observations_multi(std::ostream& measurements_out, std::ostream& responses_out,
                                     const DesignSet& design) {
    const int order = design.shape().order();
    measurements_out << "mid";
    for (int k = 1; k <= order; ++k) measurements_out << ",j" << k;
    measurements_out << ",weight\n";
    responses_out << "mid,y\n";
    for (std::int64_t i = 0; i < design.size(); ++i) {
        const Observation& obs = design[i];
        for (std::int64_t e = 0; e < obs.x.n_entries(); ++e) {
            measurements_out << i;
            for (std::int64_t v : obs.x.index(e)) measurements_out << ',' << v;
            measurements_out << ',' << format_double(obs.x.weight(e)) << '\n';
        }
        responses_out << i << ',' << format_double(obs.y) << '\n';
    }
}

[[nodiscard]] inline DesignSet read_observations_multi(std::istream& measurements_in,
                                                       std::istream& responses_in,
                                                       const Shape& shape) {
    const auto order = static_cast<std::size_t>(shape.order());
    std::string line;

    if (!std::getline(measurements_in, line)) throw io_error("measurements: missing header");
    std::map<std::int64_t, std::vector<SparseMeasurement::Entry>> entries;
    std::int64_t line_no = 1;
    while (std::getline(measurements_in, line)) {
        ++line_no;
        detail::chomp(line);
        if (line.empty()) continue;
        const std::string where = "measurements line " + std::to_string(line_no);
        const std::vector<std::string> fields = detail::split(line, ',');
        if (fields.size() != order + 2) throw io_error(where + ": wrong field count");
        const std::int64_t mid = detail::parse_int(fields[0], where);
        MultiIndex index(order);
        for (std::size_t k = 0; k < order; ++k) index[k] = detail::parse_int(fields[k + 1], where);
        entries[mid].push_back({std::move(index), detail::parse_double(fields[order + 1], where)});
    }

    if (!std::getline(responses_in, line)) throw io_error("responses: missing header");
    std::vector<Observation> observations;
    line_no = 1;
    std::vector<SparseMeasurement> measurements;
    std::vector<double> responses;
    while (std::getline(responses_in, line)) {
        ++line_no;
        detail::chomp(line);
        if (line.empty()) continue;
        const std::string where = "responses line " + std::to_string(line_no);
        const std::vector<std::string> fields = detail::split(line, ',');
        if (fields.size() != 2) throw io_error(where + ": wrong field count");
        const std::int64_t mid = detail::parse_int(fields[0], where);
        const auto found = entries.find(mid);
        if (found == entries.end()) {
            throw io_error(where + ": measurement id " + std::to_string(mid) + " has no entries");
        }
        try {
            measurements.emplace_back(shape, found->second);
        } catch (const structural_error& e) {
            throw io_error(where + ": " + e.what());
        }
        responses.push_back(detail::parse_double(fields[1], where));
        entries.erase(found);
    }
    if (!entries.empty()) {
        throw io_error("measurements: id " + std::to_string(entries.begin()->first) +
                       " has no response row");
    }
    try {
        const DesignKind kind = detect_design_kind(measurements);
        observations.reserve(measurements.size());
        for (std::size_t i = 0; i < measurements.size(); ++i) {
            observations.push_back({std::move(measurements[i]), responses[i]});
        }
        return DesignSet(shape, std::move(observations), kind);
    } catch (const validation_error& e) {
        throw io_error(std::string("observations: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifest: flat key=value lines, keys sorted.
// ---------------------------------------------------------------------------

using Manifest = std::map<std::string, std::string>;

inline void write_manifest(std::ostream& out, const Manifest& manifest) {
    for (const auto& [key, value] : manifest) out << key << '=' << value << '\n';
}

[[nodiscard]] inline Manifest read_manifest(std::istream& in) {
    Manifest manifest;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        detail::chomp(line);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t pos = line.find('=');
        if (pos == std::string::npos) {
            throw io_error("manifest line " + std::to_string(line_no) + ": missing '='");
        }
        manifest[line.substr(0, pos)] = line.substr(pos + 1);
    }
    return manifest;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    auto out = detail::open_out(path);
    write_manifest(out, manifest);
    if (!out) throw io_error("write failed: " + path.string());
}

[[nodiscard]] inline Manifest read_manifest(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_manifest(in);
}

[[nodiscard]] inline const std::string& manifest_get(const Manifest& manifest,
                                                     const std::string& key) {
    const auto found = manifest.find(key);
    if (found == manifest.end()) throw io_error("manifest: missing key '" + key + "'");
    return found->second;
}

// ---------------------------------------------------------------------------
// Chain checkpoint: hyperparameters, sweep count, RNG state (opaque hex),
// then the factors block.
// ---------------------------------------------------------------------------

struct Checkpoint {
    Hyperparams hp;
    SamplerState state;
};

inline void write_checkpoint(std::ostream& out, const SamplerState& state,
                             const Hyperparams& hp) {
    out << "version=1\n";
    out << "sigma=" << format_double(hp.sigma) << '\n';
    out << "sigma_p=" << format_double(hp.sigma_p) << '\n';
    out << "xi=" << format_double(hp.xi) << '\n';
    out << "d_max=" << hp.d_max << '\n';
    if (hp.R) out << "R=" << format_double(*hp.R) << '\n';
    out << "sweep_count=" << state.sweep_count << '\n';
    out << "rng=" << rng_to_hex(state.rng) << '\n';
    out << "factors:\n";
    write_cp_factors(out, state.factors);
}

[[nodiscard]] inline Checkpoint read_checkpoint(std::istream& in) {
    Manifest header;
    std::string line;
    while (std::getline(in, line)) {
        detail::chomp(line);
        if (line == "factors:") break;
        if (line.empty()) continue;
        const std::size_t pos = line.find('=');
        if (pos == std::string::npos) throw io_error("checkpoint: malformed header line");
        header[line.substr(0, pos)] = line.substr(pos + 1);
    }
    if (manifest_get(header, "version") != "1") throw io_error("checkpoint: unknown version");
    Hyperparams hp;
    hp.sigma = detail::parse_double(manifest_get(header, "sigma"), "checkpoint sigma");
    hp.sigma_p = detail::parse_double(manifest_get(header, "sigma_p"), "checkpoint sigma_p");
    hp.xi = detail::parse_double(manifest_get(header, "xi"), "checkpoint xi");
    hp.d_max = detail::parse_int(manifest_get(header, "d_max"), "checkpoint d_max");
    if (header.count("R")) hp.R = detail::parse_double(header.at("R"), "checkpoint R");
    try {
        hp.validate();
    } catch (const validation_error& e) {
        throw io_error(std::string("checkpoint: ") + e.what());
    }
    CPFactors factors = read_cp_factors(in);
    SamplerState state{std::move(factors),
                       rng_from_hex(manifest_get(header, "rng")),
                       detail::parse_int(manifest_get(header, "sweep_count"),
                                         "checkpoint sweep_count")};
    return Checkpoint{hp, std::move(state)};
}

inline void write_checkpoint(const std::filesystem::path& path, const SamplerState& state,
                             const Hyperparams& hp) {
    auto out = detail::open_out(path);
    write_checkpoint(out, state, hp);
    if (!out) throw io_error("write failed: " + path.string());
}

[[nodiscard]] inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Posterior summary emission
// ---------------------------------------------------------------------------

inline void write_rank_histogram_csv(std::ostream& out, const PosteriorSummary& summary) {
    out << "rank,count\n";
    for (const auto& [rank, count] : summary.rank_histogram) {
        out << rank << ',' << count << '\n';
    }
}

inline void write_summary_stats(std::ostream& out, const PosteriorSummary& summary) {
    out << "n_kept=" << summary.n_kept << '\n';
    out << "n_accepted=" << summary.n_accepted << '\n';
    out << "n_proposed_rank_moves=" << summary.n_proposed_rank_moves << '\n';
    out << "n_accepted_rank_moves=" << summary.n_accepted_rank_moves << '\n';
    out << "rejection_rate=" << format_double(summary.rejection_rate) << '\n';
    out << "rank_mode=" << posterior_rank_mode(summary) << '\n';
}

}  // namespace cpbayes
