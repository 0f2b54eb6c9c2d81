// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "signpipe/error.hpp"
#include "signpipe/preprocess.hpp"
#include "test_support.hpp"

using namespace signpipe;

namespace {

LandmarkFrame row(std::uint32_t frame, LandmarkKind kind, std::uint32_t idx, float x, float y,
                  float z = kMissing)
{
    return LandmarkFrame{frame, kind, idx, x, y, z};
}

FrameSequence one_column(std::initializer_list<float> xs)
{
    FrameSequence seq;
    for (float x : xs)
        seq.push_back(PointFrame{Point2{x, kMissing}});
    return seq;
}

} // namespace

TEST_CASE("default selection has 88 points")
{
    const auto spec = SelectionSpec::defaults();
    CHECK(spec.lips().size() == 40);
    CHECK(spec.pose().size() == 6);
    CHECK(spec.num_points() == 88);
    CHECK(spec.feature_dim() == 176);
    CHECK(spec.row_of(LandmarkKind::left_hand, 0) == 40u);
    CHECK(spec.row_of(LandmarkKind::right_hand, 20) == 81u);
    CHECK(spec.row_of(LandmarkKind::pose, 11) == 82u);
    CHECK(spec.row_of(LandmarkKind::pose, 0) == std::nullopt);
    CHECK(spec.row_of(LandmarkKind::face, 1) == std::nullopt);
    CHECK(spec.row_of(LandmarkKind::face, 0) == 0u);
}

TEST_CASE("selection spec JSON")
{
    const auto spec = SelectionSpec::parse(R"({"lips":[0,13],"pose":[11,12]})");
    CHECK(spec.num_points() == 46);
    CHECK_THROWS_AS(SelectionSpec::parse(R"({"lips":[13,0],"pose":[]})"), ValidationError);
    CHECK_THROWS_AS(SelectionSpec::parse(R"({"lips":[0,0],"pose":[]})"), ValidationError);
    CHECK_THROWS_AS(SelectionSpec::parse(R"({"lips":[468],"pose":[]})"), ValidationError);
    CHECK_THROWS_AS(SelectionSpec::parse(R"({"lips":[]})"), ValidationError);
    CHECK_THROWS_AS(SelectionSpec::parse("not json"), ValidationError);
    const auto shipped =
        SelectionSpec::load(std::filesystem::path(SIGNPIPE_SOURCE_DIR) / "configs/selection.json");
    CHECK(shipped.lips() == SelectionSpec::defaults().lips());
    CHECK(shipped.pose() == SelectionSpec::defaults().pose());
}

TEST_CASE("select_and_drop_z lays out blocks and flags absences")
{
    const auto spec = SelectionSpec::defaults();
    SignSample s{"s", {row(0, LandmarkKind::right_hand, 3, 0.2f, 0.3f, 0.9f)}, std::nullopt};
    const auto frames = select_and_drop_z(s, spec);
    REQUIRE(frames.size() == 1);
    REQUIRE(frames[0].size() == 88);
    for (std::size_t i = 0; i < 88; ++i) {
        if (i == spec.right_hand_offset() + 3) {
            CHECK(frames[0][i] == Point2{0.2f, 0.3f});
        } else {
            CHECK(is_missing(frames[0][i].x));
            CHECK(is_missing(frames[0][i].y));
        }
    }
}

TEST_CASE("unselected landmarks are ignored and frames group by index")
{
    const auto spec = SelectionSpec::defaults();
    SignSample s{"s",
                 {row(0, LandmarkKind::face, 1, 0.5f, 0.5f), row(0, LandmarkKind::pose, 0, 0.5f, 0.5f),
                  row(4, LandmarkKind::pose, 16, 0.1f, 0.2f)},
                 std::nullopt};
    const auto frames = select_and_drop_z(s, spec);
    REQUIRE(frames.size() == 2);
    CHECK(frames[1][*spec.row_of(LandmarkKind::pose, 16)] == Point2{0.1f, 0.2f});
}

TEST_CASE("z is dropped")
{
    Rng rng(3);
    auto a = testing::random_sample(rng, "a", 4);
    auto b = a;
    for (auto& f : a.frames)
        f.z = kMissing;
    for (auto& f : b.frames)
        f.z = 0.0f;
    const auto spec = SelectionSpec::defaults();
    CHECK(select_and_drop_z(a, spec) == select_and_drop_z(b, spec));
    CHECK(preprocess_pipeline(a, spec, 32) == preprocess_pipeline(b, spec, 32));
}

TEST_CASE("normalize examples")
{
    SUBCASE("two values")
    {
        const auto out = normalize(one_column({0.0f, 2.0f}));
        CHECK(out[0][0].x == -1.0f);
        CHECK(out[1][0].x == 1.0f);
        // missing y imputed to zero
        CHECK(out[0][0].y == 0.0f);
    }
    SUBCASE("constant sample takes the std floor path")
    {
        const auto out = normalize(one_column({0.5f, 0.5f, 0.5f}));
        for (const auto& f : out)
            CHECK(f[0].x == 0.0f);
    }
    SUBCASE("population std")
    {
        // mean 2.5, std sqrt(1.25)
        const auto out = normalize(one_column({1.0f, 2.0f, 3.0f, 4.0f}));
        CHECK(out[0][0].x == doctest::Approx(-1.3416).epsilon(1e-4));
        CHECK(out[1][0].x == doctest::Approx(-0.4472).epsilon(1e-4));
        CHECK(out[2][0].x == doctest::Approx(0.4472).epsilon(1e-4));
        CHECK(out[3][0].x == doctest::Approx(1.3416).epsilon(1e-4));
    }
    SUBCASE("all missing is degenerate")
    {
        FrameSequence seq(2, PointFrame(3));
        CHECK_THROWS_AS(normalize(seq), DegenerateInputError);
    }
}

TEST_CASE("resample examples")
{
    FrameSequence two = {PointFrame{Point2{0.0f, 0.0f}}, PointFrame{Point2{1.0f, 1.0f}}};
    const auto three = resample(two, 3);
    CHECK(three.rows() == 3);
    CHECK(three.cols() == 2);
    CHECK(three(0, 0) == 0.0f);
    CHECK(three(1, 0) == 0.5f);
    CHECK(three(2, 1) == 1.0f);

    const auto same = resample(two, 2);
    CHECK(same(0, 0) == 0.0f);
    CHECK(same(1, 0) == 1.0f);

    FrameSequence single = {PointFrame{Point2{0.25f, -0.5f}}};
    const auto ext = resample(single, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(ext(t, 0) == 0.25f);
        CHECK(ext(t, 1) == -0.5f);
    }

    CHECK_THROWS_AS(resample(two, 0), ArgumentError);
}

TEST_CASE("resampling preserves constant sequences exactly")
{
    FrameSequence seq(7, PointFrame{Point2{0.123456f, -3.75f}, Point2{1e-7f, 42.0f}});
    for (std::size_t t : {1u, 2u, 5u, 7u, 13u, 32u, 100u}) {
        const auto out = resample(seq, t);
        for (std::size_t r = 0; r < t; ++r) {
            CHECK(out(r, 0) == 0.123456f);
            CHECK(out(r, 1) == -3.75f);
            CHECK(out(r, 2) == 1e-7f);
            CHECK(out(r, 3) == 42.0f);
        }
    }
}

TEST_CASE("flip reflects x and swaps sides")
{
    const auto spec = SelectionSpec::defaults();
    FrameSequence seq(1, PointFrame(spec.num_points()));
    seq[0][spec.left_hand_offset() + 2] = Point2{0.375f, 0.4f};
    seq[0][*spec.row_of(LandmarkKind::pose, 13)] = Point2{0.125f, 0.9f};
    seq[0][0] = Point2{0.25f, 0.5f};

    const auto out = horizontal_flip(seq, spec);
    CHECK(out[0][spec.right_hand_offset() + 2] == Point2{0.625f, 0.4f});
    CHECK(is_missing(out[0][spec.left_hand_offset() + 2].x));
    CHECK(out[0][*spec.row_of(LandmarkKind::pose, 14)].x == 0.875f);
    CHECK(out[0][0] == Point2{0.75f, 0.5f});
    CHECK(horizontal_flip(out, spec) == seq);
}

TEST_CASE("affine")
{
    AffineParams rot;
    rot.rotate_deg = 90.0;
    const auto p = apply_affine(rot, Point2{1.0f, 0.0f});
    CHECK(std::abs(p.x - 0.0f) < 1e-6f);
    CHECK(std::abs(p.y - 1.0f) < 1e-6f);

    AffineParams shift;
    shift.shift_x = 0.5;
    shift.scale = 2.0;
    const auto q = apply_affine(shift, Point2{1.0f, 1.0f});
    CHECK(q.x == 2.5f);
    CHECK(q.y == 2.0f);

    const auto missing = apply_affine(shift, Point2{});
    CHECK(is_missing(missing.x));

    Rng rng(5);
    const auto spec = SelectionSpec::defaults();
    const auto seq = select_and_drop_z(testing::random_sample(rng, "a", 3), spec);
    CHECK(apply_affine(seq, AffineParams{}) == seq);
}

TEST_CASE("augment")
{
    const auto spec = SelectionSpec::defaults();
    Rng rng(9);
    const auto seq = select_and_drop_z(testing::random_sample(rng, "a", 12), spec);

    SUBCASE("neutral config is the identity")
    {
        AugmentConfig cfg;
        cfg.rng_seed = 1234;
        CHECK(augment(seq, spec, cfg) == seq);
    }
    SUBCASE("certain flip")
    {
        AugmentConfig cfg;
        cfg.flip_prob = 1.0;
        CHECK(augment(seq, spec, cfg) == horizontal_flip(seq, spec));
    }
    SUBCASE("certain mask")
    {
        AugmentConfig cfg;
        cfg.mask_prob = 1.0;
        for (const auto& f : augment(seq, spec, cfg))
            for (const auto& p : f)
                CHECK(is_missing(p.x));
    }
    SUBCASE("temporal scaling changes length")
    {
        AugmentConfig cfg;
        cfg.resample_lo = cfg.resample_hi = 0.5;
        CHECK(augment(seq, spec, cfg).size() == 6);
        cfg.resample_lo = cfg.resample_hi = 2.0;
        CHECK(augment(seq, spec, cfg).size() == 24);
    }
    SUBCASE("seeded determinism")
    {
        const auto cfg = AugmentConfig::training_defaults(77);
        CHECK(augment(seq, spec, cfg) == augment(seq, spec, cfg));
        auto other = cfg;
        other.rng_seed = 78;
        CHECK_FALSE(augment(seq, spec, cfg) == augment(seq, spec, other));
    }
    SUBCASE("invalid config")
    {
        AugmentConfig cfg;
        cfg.mask_prob = 1.5;
        CHECK_THROWS_AS(augment(seq, spec, cfg), ValidationError);
        cfg = AugmentConfig{};
        cfg.resample_lo = 2.0;
        CHECK_THROWS_AS(augment(seq, spec, cfg), ValidationError);
    }
}

TEST_CASE("pipeline")
{
    const auto spec = SelectionSpec::defaults();
    Rng rng(21);
    const auto sample = testing::random_sample(rng, "p", 9);

    CHECK(preprocess_pipeline(sample, spec, 32) == preprocess_pipeline(sample, spec, 32));
    const auto cfg = AugmentConfig::training_defaults(5);
    CHECK(preprocess_pipeline(sample, spec, 32, cfg) == preprocess_pipeline(sample, spec, 32, cfg));

    // property: shape is (T, 2K) for any input length
    for (int trial = 0; trial < 40; ++trial) {
        const auto len = 1 + rng.below(500);
        SignSample s{"r", {}, std::nullopt};
        for (std::uint32_t f = 0; f < len; ++f)
            s.frames.push_back(row(f, LandmarkKind::right_hand, static_cast<std::uint32_t>(f % 21),
                                   static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())));
        const auto out = preprocess_pipeline(s, spec, 32);
        CHECK(out.rows() == 32);
        CHECK(out.cols() == 176);
        for (float v : out.values())
            CHECK(std::isfinite(v));
    }

    SignSample empty_hands{"e", {row(0, LandmarkKind::face, 1, 0.5f, 0.5f)}, std::nullopt};
    CHECK_THROWS_AS(preprocess_pipeline(empty_hands, spec, 32), DegenerateInputError);
    CHECK_THROWS_AS(preprocess_pipeline(sample, spec, 0), ArgumentError);
}
