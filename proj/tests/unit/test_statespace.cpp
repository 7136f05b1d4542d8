#include "oracles.hpp"
#include "temp_dir.hpp"

#include "region_styler/error.hpp"
#include "region_styler/image_io.hpp"
#include "region_styler/statespace.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace region_styler;
using testing_support::TempDir;

namespace {

const ConvAutoencoderBackend& autoencoder() {
    static const ConvAutoencoderBackend backend(fit_conv_autoencoder(AutoencoderFitOptions{}));
    return backend;
}

double inner(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST(Modulation, TwoByTwoFixture) {
    // One channel, left column masked, alpha = (raw scale, shift).
    const LatentState z(1, 2, 2, std::vector<double>{1.0, 2.0, 3.0, 4.0});
    BinaryMask m(2, 2);
    m.set(0, 0, true);
    m.set(1, 0, true);
    const ConditionVector alpha({std::atanh(0.5), -1.0});
    EXPECT_DOUBLE_EQ(alpha.scale(0), 1.5);
    const auto out = region_modulate(z, m, alpha);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.5);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 1), 2.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 3.5);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 1), 4.0);
}

TEST(Modulation, ZeroConditionIsIdentity) {
    SeededRng rng(1);
    LatentState z(4, 3, 3);
    for (auto& v : z.data()) v = rng.uniform(-2.0, 2.0);
    EXPECT_EQ(region_modulate(z, BinaryMask(3, 3, true), ConditionVector::zero(4)), z);
}

TEST(Modulation, MismatchedSizesAreShapeErrors) {
    const LatentState z(2, 3, 3);
    EXPECT_THROW(region_modulate(z, BinaryMask(2, 3, true), ConditionVector::zero(2)), ShapeError);
    EXPECT_THROW(region_modulate(z, BinaryMask(3, 3, true), ConditionVector::zero(3)), ShapeError);
}

TEST(Assemble, MatchesPerLocationOracle) {
    for (int i = 0; i < 20; ++i) {
        SeededRng rng(100 + i);
        const std::size_t r = 1 + rng.index(4);
        const auto mask = oracle::random_partition(rng, 7, 9, r);
        LatentState z(3, 7, 9);
        for (auto& v : z.data()) v = rng.uniform(-1.0, 1.0);
        std::vector<RegionCondition> regions;
        std::vector<BinaryMask> masks;
        std::vector<ConditionVector> alphas;
        for (std::int32_t label = 1; label <= static_cast<std::int32_t>(r); ++label) {
            std::vector<double> a(6);
            for (auto& v : a) v = rng.uniform(-1.0, 1.0);
            masks.push_back(binary_mask(mask, label));
            alphas.emplace_back(a);
            regions.push_back({masks.back(), alphas.back()});
        }
        const auto got = assemble_state(z, regions);
        const auto want = oracle::assemble(z, masks, alphas);
        for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(got.data()[k], want.data()[k], 1e-15);
    }
}

TEST(Assemble, RejectsOverlapAndGaps) {
    const LatentState z(1, 2, 2);
    const RegionCondition all{BinaryMask(2, 2, true), ConditionVector::zero(1)};
    const RegionCondition none{BinaryMask(2, 2, false), ConditionVector::zero(1)};
    EXPECT_NO_THROW(assemble_state(z, std::vector<RegionCondition>{all, none}));
    EXPECT_THROW(assemble_state(z, std::vector<RegionCondition>{all, all}), ValidationError);
    EXPECT_THROW(assemble_state(z, std::vector<RegionCondition>{none}), ValidationError);
}

TEST(IdentityBackend, RoundTripsExactly) {
    const IdentityStateBackend id;
    SeededRng rng(2);
    const auto x = oracle::random_image(rng, 3, 5, 4);
    const auto y = id.generate(id.encode(x));
    EXPECT_EQ(y, x);
}

TEST(ConvAutoencoder, ReconstructsWithinDeclaredTolerance) {
    const auto& ae = autoencoder();
    EXPECT_GT(ae.reconstruction_tolerance(), 0.0);
    EXPECT_LT(ae.reconstruction_tolerance(), 0.05);
    for (const auto& x : {autoencoder_reference_image(3)}) {
        const auto y = ae.generate(ae.encode(x));
        for (std::size_t i = 0; i < x.size(); ++i) {
            ASSERT_LE(std::fabs(y.data()[i] - x.data()[i]), ae.reconstruction_tolerance());
        }
    }
}

TEST(ConvAutoencoder, ChangesStayWithinHalo) {
    const auto& ae = autoencoder();
    SeededRng rng(3);
    const auto x = oracle::random_image(rng, 3, 12, 12);
    auto z = ae.encode(x);
    const auto base = ae.generate(z);
    z.at(2, 6, 6) += 1.0;
    const auto moved = ae.generate(z);
    const auto halo = static_cast<long>(ae.halo());
    for (std::size_t c = 0; c < 3; ++c) {
        for (long y = 0; y < 12; ++y) {
            for (long x0 = 0; x0 < 12; ++x0) {
                if (std::labs(y - 6) <= halo && std::labs(x0 - 6) <= halo) continue;
                EXPECT_EQ(moved.at(c, y, x0), base.at(c, y, x0));
            }
        }
    }
}

TEST(ConvAutoencoder, VjpIsAdjointOfLinearPart) {
    const auto& ae = autoencoder();
    SeededRng rng(4);
    LatentState z(ae.state_channels(3), 6, 7), dz(ae.state_channels(3), 6, 7);
    for (auto& v : z.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : dz.data()) v = rng.uniform(-1.0, 1.0);
    ImageTensor g(3, 6, 7);
    for (auto& v : g.data()) v = rng.uniform(-1.0, 1.0);
    // G is affine: G(z + dz) - G(z) = J dz.
    LatentState zp = z;
    for (std::size_t i = 0; i < z.size(); ++i) zp.data()[i] += dz.data()[i];
    const auto a = ae.generate(zp), b = ae.generate(z);
    double lhs = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) lhs += (a.data()[i] - b.data()[i]) * g.data()[i];
    const double rhs = inner(dz.data(), ae.generate_vjp(z, g).data());
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::fabs(lhs)));
}

TEST(ConvAutoencoder, CheckpointRoundTrip) {
    TempDir tmp("rs-ae");
    const auto& weights = autoencoder().weights();
    save_autoencoder_checkpoint(tmp / "ae.bin", weights);
    const auto back = load_autoencoder_checkpoint(tmp / "ae.bin");
    EXPECT_EQ(back.decoder_weights, weights.decoder_weights);
    EXPECT_EQ(back.encoder_bias, weights.encoder_bias);
    EXPECT_EQ(back.tolerance, weights.tolerance);

    auto bytes = read_file(tmp / "ae.bin");
    bytes[0] = 'X';
    write_file(tmp / "bad.bin", bytes);
    EXPECT_THROW(load_autoencoder_checkpoint(tmp / "bad.bin"), DecodeError);
    bytes = read_file(tmp / "ae.bin");
    bytes.resize(bytes.size() - 8);
    write_file(tmp / "short.bin", bytes);
    EXPECT_THROW(load_autoencoder_checkpoint(tmp / "short.bin"), DecodeError);
    EXPECT_THROW(load_autoencoder_checkpoint(tmp / "none.bin"), FileNotFoundError);
}

TEST(ConvAutoencoder, FitIsDeterministic) {
    AutoencoderFitOptions small;
    small.training_images = 2;
    small.training_size = 12;
    EXPECT_EQ(fit_conv_autoencoder(small).decoder_weights, fit_conv_autoencoder(small).decoder_weights);
}

TEST(ConditionMap, SeededAndSized) {
    const MockEncoder enc;
    const ConditionMap a(32, 4, 1), b(32, 4, 1), c(32, 4, 2);
    const auto alpha = prompt_condition(enc, "fire", a);
    EXPECT_EQ(alpha.size(), 8u);
    EXPECT_EQ(alpha, prompt_condition(enc, "fire", b));
    EXPECT_NE(alpha, prompt_condition(enc, "fire", c));
    EXPECT_NE(alpha, prompt_condition(enc, "snow", a));
}
