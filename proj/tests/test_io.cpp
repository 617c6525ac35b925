#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cpbayes/design.hpp"
#include "cpbayes/errors.hpp"
#include "cpbayes/io.hpp"
#include "cpbayes/rng.hpp"
#include "cpbayes/sampler.hpp"
#include "test_util.hpp"

namespace {

using namespace cpbayes;

TEST(FormatDouble, ShortestFormRoundTripsExactly) {
    const std::vector<double> values = {0.1,
                                        -1.0 / 3.0,
                                        3.141592653589793,
                                        1e308,
                                        -1e-307,
                                        123456789.123456789,
                                        std::numeric_limits<double>::max(),
                                        std::numeric_limits<double>::min(),
                                        -0.0,
                                        0.0,
                                        2.0};
    for (const double v : values) {
        std::istringstream in(format_double(v));
        double back = 0.0;
        ASSERT_TRUE(static_cast<bool>(in >> back)) << format_double(v);
        EXPECT_EQ(back, v) << format_double(v);
    }
    EXPECT_EQ(format_double(2.0), "2");
    EXPECT_EQ(format_double(-0.0), "-0");
}

TEST(DenseTensorIo, RoundTripsBitwise) {
    Rng rng(501);
    const DenseTensor a = testutil::random_dense(Shape({3, 4, 2}), rng, 5.0);
    std::stringstream text;
    write_dense_tensor(text, a);
    std::string header;
    std::getline(text, header);
    EXPECT_EQ(header, "3 3 4 2");
    text.seekg(0);
    const DenseTensor b = read_dense_tensor(text);
    ASSERT_EQ(b.shape(), a.shape());
    for (std::int64_t c = 0; c < a.size(); ++c) EXPECT_EQ(a[c], b[c]);
}

TEST(DenseTensorIo, MalformedInputsRaiseIoErrors) {
    {
        std::stringstream text("");
        EXPECT_THROW((void)read_dense_tensor(text), io_error);
    }
    {
        std::stringstream text("1 5\n1\n2\n3\n4\n5\n");
        EXPECT_THROW((void)read_dense_tensor(text), io_error);
    }
    {
        std::stringstream text("2 2\n1\n2\n3\n4\n");
        EXPECT_THROW((void)read_dense_tensor(text), io_error);
    }
    {
        std::stringstream text("2 2 2\n1\n2\n3\n");
        EXPECT_THROW((void)read_dense_tensor(text), io_error);
    }
    {
        std::stringstream text("2 2 2\n1\n2\n3\n4\n5\n");
        EXPECT_THROW((void)read_dense_tensor(text), io_error);
    }
    EXPECT_THROW((void)read_dense_tensor(std::filesystem::path("/nonexistent/tensor.txt")),
                 io_error);
}

TEST(CpFactorsIo, RoundTripsBitwiseIncludingRankZero) {
    Rng rng(502);
    const CPFactors a = testutil::random_factors(Shape({2, 3, 4}), 3, rng, 2.0);
    std::stringstream text;
    write_cp_factors(text, a);
    std::string header;
    std::getline(text, header);
    EXPECT_EQ(header, "3 3 2 3 4");
    text.seekg(0);
    const CPFactors b = read_cp_factors(text);
    ASSERT_EQ(b.rank(), 3);
    ASSERT_EQ(b.shape(), a.shape());
    for (int k = 0; k < 3; ++k) {
        const Eigen::MatrixXd& u = a.factor(k);
        const Eigen::MatrixXd& v = b.factor(k);
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
            for (Eigen::Index j = 0; j < u.cols(); ++j) EXPECT_EQ(u(r, j), v(r, j));
        }
    }

    const CPFactors zero = CPFactors::zeros(Shape({2, 2}), 0);
    std::stringstream zero_text;
    write_cp_factors(zero_text, zero);
    EXPECT_EQ(zero_text.str(), "2 0 2 2\n");
    const CPFactors zero_back = read_cp_factors(zero_text);
    EXPECT_EQ(zero_back.rank(), 0);
    EXPECT_EQ(zero_back.shape(), zero.shape());
}

TEST(CpFactorsIo, MalformedInputsRaiseIoErrors) {
    {
        std::stringstream text("3 2\n");
        EXPECT_THROW((void)read_cp_factors(text), io_error);
    }
    {
        std::stringstream text("2 -1 2 2\n");
        EXPECT_THROW((void)read_cp_factors(text), io_error);
    }
    {
        std::stringstream text("2 1 2 2\n1 2\n3\n");
        EXPECT_THROW((void)read_cp_factors(text), io_error);
    }
}

TEST(ObservationsCsv, RoundTripPreservesEverything) {
    Rng rng(503);
    const Shape shape({3, 2, 4});
    const CPFactors truth = testutil::random_factors(shape, 2, rng);
    const auto xs = make_completion_design(shape, 12, rng);
    const DesignSet design = generate_responses(truth, xs, NoiseSpec(0.5), rng);

    std::stringstream text;
    write_observations_csv(text, design);
    std::string header;
    std::getline(text, header);
    EXPECT_EQ(header, "j1,j2,j3,weight,y");
    text.seekg(0);
    const DesignSet back = read_observations_csv(text, shape);
    EXPECT_EQ(back.kind(), DesignKind::ElementIndicator);
    ASSERT_EQ(back.size(), design.size());
    for (std::int64_t i = 0; i < design.size(); ++i) {
        EXPECT_EQ(back[i].x.flat(0), design[i].x.flat(0));
        EXPECT_EQ(back[i].x.weight(0), design[i].x.weight(0));
        EXPECT_EQ(back[i].y, design[i].y);
    }
}

TEST(ObservationsCsv, FractionalWeightsDetectAsGenericSparse) {
    const Shape shape({2, 2});
    std::stringstream text("j1,j2,weight,y\n0,1,0.5,2.25\n1,1,1,0.125\n");
    const DesignSet design = read_observations_csv(text, shape);
    EXPECT_EQ(design.kind(), DesignKind::GenericSparse);
    EXPECT_EQ(design[0].x.weight(0), 0.5);
}

TEST(ObservationsCsv, MalformedInputsRaiseIoErrors) {
    const Shape shape({2, 2});
    {
        std::stringstream text("");
        EXPECT_THROW((void)read_observations_csv(text, shape), io_error);
    }
    {
        std::stringstream text("j1,j2,weight,y\n0,1,1\n");
        EXPECT_THROW((void)read_observations_csv(text, shape), io_error);
    }
    {
        std::stringstream text("j1,j2,weight,y\n0,x,1,2\n");
        EXPECT_THROW((void)read_observations_csv(text, shape), io_error);
    }
    {
        std::stringstream text("j1,j2,weight,y\n0,5,1,2\n");
        EXPECT_THROW((void)read_observations_csv(text, shape), io_error);
    }
    {
        // Weight above the unit gate surfaces as an input problem.
        std::stringstream text("j1,j2,weight,y\n0,1,1.5,2\n");
        EXPECT_THROW((void)read_observations_csv(text, shape), io_error);
    }
}

TEST(ObservationsCsv, MultiEntryMeasurementsAreUnsupported) {
    const std::vector<MultitaskCase> cases = {{0, 1, {0.2, 0.3, 0.1}}};
    const auto xs = make_multitask_design(2, 2, 3, cases, GatePolicy::Reject);
    Rng rng(507);
    const CPFactors truth = testutil::random_factors(Shape({2, 2, 3}), 1, rng);
    const DesignSet design = generate_responses(truth, xs, NoiseSpec(0.3), rng);
    std::stringstream text;
    EXPECT_THROW(write_observations_csv(text, design), unsupported_error);
}

TEST(ObservationsMulti, RoundTripPreservesResponseOrder) {
    const std::vector<MultitaskCase> cases = {{0, 1, {0.2, 0.3, 0.1}},
                                              {1, 0, {-0.4, 0.0, 0.25}},
                                              {1, 1, {0.05, -0.15, 0.3}}};
    const auto xs = make_multitask_design(2, 2, 3, cases, GatePolicy::Reject);
    Rng rng(508);
    const CPFactors truth = testutil::random_factors(Shape({2, 2, 3}), 2, rng);
    const DesignSet design =
        generate_responses(truth, xs, NoiseSpec(0.3), rng, DesignKind::TaskSlice);
    EXPECT_EQ(design.kind(), DesignKind::TaskSlice);

    std::stringstream measurements;
    std::stringstream responses;
    write_observations_multi(measurements, responses, design);
    std::string header;
    std::getline(measurements, header);
    EXPECT_EQ(header, "mid,j1,j2,j3,weight");
    std::getline(responses, header);
    EXPECT_EQ(header, "mid,y");
    measurements.seekg(0);
    responses.seekg(0);

    const DesignSet back = read_observations_multi(measurements, responses, design.shape());
    EXPECT_EQ(back.kind(), DesignKind::GenericSparse);
    ASSERT_EQ(back.size(), design.size());
    for (std::int64_t i = 0; i < design.size(); ++i) {
        ASSERT_EQ(back[i].x.n_entries(), design[i].x.n_entries());
        for (std::int64_t e = 0; e < design[i].x.n_entries(); ++e) {
            EXPECT_EQ(back[i].x.flat(e), design[i].x.flat(e));
            EXPECT_EQ(back[i].x.weight(e), design[i].x.weight(e));
        }
        EXPECT_EQ(back[i].y, design[i].y);
    }
}

TEST(ObservationsMulti, UnmatchedIdsRaiseIoErrors) {
    const Shape shape({2, 2, 2});
    {
        std::stringstream measurements("mid,j1,j2,j3,weight\n0,0,0,0,0.5\n");
        std::stringstream responses("mid,y\n0,1.5\n1,2.5\n");
        EXPECT_THROW((void)read_observations_multi(measurements, responses, shape), io_error);
    }
    {
        std::stringstream measurements("mid,j1,j2,j3,weight\n0,0,0,0,0.5\n7,1,1,1,0.5\n");
        std::stringstream responses("mid,y\n0,1.5\n");
        EXPECT_THROW((void)read_observations_multi(measurements, responses, shape), io_error);
    }
    {
        std::stringstream measurements("mid,j1,j2,j3,weight\n0,0,0,0.5\n");
        std::stringstream responses("mid,y\n0,1.5\n");
        EXPECT_THROW((void)read_observations_multi(measurements, responses, shape), io_error);
    }
}

TEST(ManifestIo, SortedWriteAndCommentAwareRead) {
    Manifest manifest;
    manifest["sigma"] = "0.5";
    manifest["dims"] = "3x4x5";
    manifest["n"] = "120";
    std::stringstream text;
    write_manifest(text, manifest);
    EXPECT_EQ(text.str(), "dims=3x4x5\nn=120\nsigma=0.5\n");

    std::stringstream annotated("# generated file\n\ndims=3x4x5\nn=120\n# trailing note\nsigma=0.5\n");
    const Manifest back = read_manifest(annotated);
    EXPECT_EQ(back, manifest);
    EXPECT_EQ(manifest_get(back, "n"), "120");
    EXPECT_THROW((void)manifest_get(back, "absent"), io_error);

    std::stringstream broken("dims 3x4x5\n");
    EXPECT_THROW((void)read_manifest(broken), io_error);
}

TEST(CheckpointIo, RoundTripsStateAndHyperparams) {
    Hyperparams hp;
    hp.sigma = 0.25;
    hp.sigma_p = 1.75;
    hp.xi = 0.375;
    hp.d_max = 5;
    hp.R = 12.5;
    SamplerState state = make_initial_state(Shape({2, 3}), hp, 504);
    state.sweep_count = 42;
    (void)draw_normal(state.rng);

    std::stringstream text;
    write_checkpoint(text, state, hp);
    Checkpoint back = read_checkpoint(text);
    EXPECT_EQ(back.hp.sigma, hp.sigma);
    EXPECT_EQ(back.hp.sigma_p, hp.sigma_p);
    EXPECT_EQ(back.hp.xi, hp.xi);
    EXPECT_EQ(back.hp.d_max, hp.d_max);
    ASSERT_TRUE(back.hp.R.has_value());
    EXPECT_EQ(*back.hp.R, 12.5);
    EXPECT_EQ(back.state.sweep_count, 42);
    EXPECT_EQ(rng_to_hex(back.state.rng), rng_to_hex(state.rng));
    EXPECT_EQ(draw_normal(back.state.rng), draw_normal(state.rng));

    hp.R.reset();
    std::stringstream no_r;
    write_checkpoint(no_r, state, hp);
    EXPECT_FALSE(read_checkpoint(no_r).hp.R.has_value());
}

TEST(CheckpointIo, MalformedInputsRaiseIoErrors) {
    Hyperparams hp;
    hp.d_max = 2;
    const SamplerState state = make_initial_state(Shape({2, 2}), hp, 505);
    std::stringstream good;
    write_checkpoint(good, state, hp);
    const std::string text = good.str();

    {
        std::string bad = text;
        bad.replace(bad.find("version=1"), 9, "version=2");
        std::stringstream in(bad);
        EXPECT_THROW((void)read_checkpoint(in), io_error);
    }
    {
        std::string bad = text;
        const std::size_t pos = bad.find("rng=");
        bad.replace(pos, bad.find('\n', pos) - pos, "rng=zz");
        std::stringstream in(bad);
        EXPECT_THROW((void)read_checkpoint(in), io_error);
    }
    {
        std::string bad = text;
        bad.replace(bad.find("xi=0.5"), 6, "xi=1.5");
        std::stringstream in(bad);
        EXPECT_THROW((void)read_checkpoint(in), io_error);
    }
    {
        std::stringstream in("version=1\nsigma=1\n");
        EXPECT_THROW((void)read_checkpoint(in), io_error);
    }
}

TEST(SummaryEmission, FrozenTextFormats) {
    PosteriorSummary summary;
    summary.n_kept = 100;
    summary.n_accepted = 80;
    summary.n_proposed_rank_moves = 20;
    summary.n_accepted_rank_moves = 5;
    summary.rejection_rate = 0.2;
    summary.rank_histogram = {{1, 50}, {2, 30}};

    std::stringstream hist;
    write_rank_histogram_csv(hist, summary);
    EXPECT_EQ(hist.str(), "rank,count\n1,50\n2,30\n");

    std::stringstream stats;
    write_summary_stats(stats, summary);
    EXPECT_EQ(stats.str(),
              "n_kept=100\nn_accepted=80\nn_proposed_rank_moves=20\nn_accepted_rank_moves=5\n"
              "rejection_rate=0.20000000000000001\nrank_mode=1\n");
}

}  // namespace
