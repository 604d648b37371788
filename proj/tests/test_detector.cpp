#include <cmath>

#include <gtest/gtest.h>

#include <fedvision/data.hpp>
#include <fedvision/detector.hpp>

#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace fedvision;

namespace {

ModelConfig small_config(int size, int grid, int hidden, std::uint64_t seed = 1) {
    ModelConfig c;
    c.image_size = size;
    c.grid_s = grid;
    c.hidden_units = hidden;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(ModelConfig, ParamCountFromLayout) {
    const ModelConfig c = small_config(64, 4, 32);
    // W1 + b1 + W2 + b2 for 4096 inputs, 32 hidden, 16 cells x 7 outputs
    const std::size_t expected = 4096 * 32 + 32 + 32 * (16 * 7) + 16 * 7;
    EXPECT_EQ(expected, 134800u);
    EXPECT_EQ(param_count(c), expected);
    EXPECT_EQ(init_model(c).size(), expected);
}

TEST(ModelConfig, Validation) {
    EXPECT_THROW(small_config(64, 5, 8).validate(), ConfigError);
    EXPECT_THROW(small_config(64, 4, 0).validate(), ConfigError);
    TrainConfig t;
    t.epochs = 0;
    EXPECT_THROW(t.validate(), ConfigError);
    t.epochs = 1;
    t.learning_rate = 1.0;
    EXPECT_THROW(t.validate(), ConfigError);
}

TEST(InitModel, DeterministicAndBiasRule) {
    const ModelConfig c = small_config(32, 4, 8, 5);
    const ParamVector a = init_model(c), b = init_model(c);
    EXPECT_TRUE(a.bit_equal(b));
    ModelConfig other = c;
    other.seed = 6;
    EXPECT_FALSE(a.bit_equal(init_model(other)));

    const ParamLayout L(c);
    for (std::size_t i = L.b1; i < L.w2; ++i) EXPECT_EQ(a[i], 0.0);
    for (std::size_t o = 0; o < L.outputs; ++o) {
        const bool objectness = o % c.cell_stride() == 0;
        EXPECT_EQ(a[L.b2 + o], objectness ? -2.0 : 0.0);
    }
    // weights are zero-mean with scale 1/sqrt(fan_in)
    double sum = 0, sq = 0;
    for (std::size_t i = L.w1; i < L.b1; ++i) {
        sum += a[i];
        sq += a[i] * a[i];
    }
    const double n = static_cast<double>(L.b1 - L.w1);
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n * static_cast<double>(L.inputs), 1.0, 0.05);
}

TEST(Forward, ZeroModelGivesPriorObjectness) {
    const ModelConfig c = small_config(32, 4, 6);
    ParamVector p(param_count(c), 0.0);
    const ParamLayout L(c);
    for (std::size_t cell = 0; cell < c.cells(); ++cell) p[L.b2 + cell * c.cell_stride()] = -2.0;
    const GridOutput g = forward(p, RasterImage(32, 32, 1, 0), c);
    const double expected = 1.0 / (1.0 + std::exp(2.0));
    EXPECT_NEAR(expected, 0.1192, 1e-4);
    for (double o : g.objectness) EXPECT_NEAR(o, expected, 1e-15);
}

TEST(Forward, ProbabilitiesNormalizedAndPure) {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        ModelConfig c = small_config(16, 2, 5, static_cast<std::uint64_t>(trial));
        c.num_classes = 2 + trial % 3;
        ParamVector p = fvtest::perturbed_params(c, static_cast<std::uint64_t>(trial));
        for (auto& v : p.values) v *= 4.0;  // push toward saturation
        const Sample s = fvtest::random_sample(c, 0, rng);
        const GridOutput g = forward(p, s.image, c);
        for (std::size_t cell = 0; cell < c.cells(); ++cell) {
            double sum = 0;
            for (double q : g.classes_of(cell)) {
                ASSERT_TRUE(std::isfinite(q));
                sum += q;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
            EXPECT_GE(g.objectness[cell], 0.0);
            EXPECT_LE(g.objectness[cell], 1.0);
            for (double b : g.box[cell]) {
                EXPECT_GE(b, 0.0);
                EXPECT_LE(b, 1.0);
            }
        }
        EXPECT_EQ(forward(p, s.image, c), g);
    }
}

TEST(Forward, RejectsMismatchedInputs) {
    const ModelConfig c = small_config(32, 4, 4);
    const ParamVector p = init_model(c);
    EXPECT_THROW(forward(p, RasterImage(16, 16, 1), c), ConfigError);
    EXPECT_THROW(forward(ParamVector(3), RasterImage(32, 32, 1), c), ConfigError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    struct Case {
        int size, grid, hidden, channels;
    };
    for (const Case& k : {Case{16, 2, 4, 1}, Case{24, 3, 6, 3}, Case{32, 4, 8, 1}}) {
        ModelConfig c = small_config(k.size, k.grid, k.hidden);
        c.channels = k.channels;
        Rng rng(static_cast<std::uint64_t>(k.size));
        std::vector<Sample> batch;
        for (int i = 0; i < 3; ++i) batch.push_back(fvtest::random_sample(c, 3, rng));
        const auto r = fvtest::gradient_check(fvtest::perturbed_params(c, 9), batch, c, 200, 17);
        EXPECT_EQ(r.probed, 200u);
        EXPECT_LT(r.max_rel_error, 1e-4) << "size " << k.size;
    }
}

TEST(Loss, EmptySceneNearPerfectModelApproachesZero) {
    const ModelConfig c = small_config(16, 2, 3);
    ParamVector p(param_count(c), 0.0);
    const ParamLayout L(c);
    Sample s;
    s.image = RasterImage(16, 16, 1, 50);
    double prev = 1e9;
    for (double bias : {-2.0, -5.0, -10.0, -20.0}) {
        for (std::size_t cell = 0; cell < c.cells(); ++cell) p[L.b2 + cell * c.cell_stride()] = bias;
        const double v = loss(p, std::vector<Sample>{s}, c).loss;
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_LT(prev, 1e-7);
}

TEST(Loss, DuplicatingBatchIsInvariant) {
    const ModelConfig c = small_config(16, 2, 4);
    Rng rng(4);
    std::vector<Sample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(fvtest::random_sample(c, 2, rng));
    std::vector<Sample> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const ParamVector p = fvtest::perturbed_params(c, 3);
    const LossResult a = loss(p, batch, c), b = loss(p, doubled, c);
    EXPECT_NEAR(a.loss, b.loss, 1e-12 * std::abs(a.loss));
    for (std::size_t i = 0; i < a.gradient.size(); ++i)
        ASSERT_NEAR(a.gradient[i], b.gradient[i], 1e-12 * (1.0 + std::abs(a.gradient[i])));
    EXPECT_THROW(loss(p, std::vector<Sample>{}, c), ConfigError);
}

TEST(Loss, LaterAnnotationOwnsSharedCell) {
    const ModelConfig c = small_config(16, 2, 3);
    const ParamVector p = fvtest::perturbed_params(c, 8);
    Sample one, two;
    one.image = two.image = RasterImage(16, 16, 1, 10);
    const Annotation first{0, {0.2, 0.2, 0.2, 0.2}}, second{1, {0.3, 0.3, 0.3, 0.1}};
    one.annotations = {second};
    two.annotations = {first, second};
    EXPECT_EQ(responsible_cell(first.box, 2), responsible_cell(second.box, 2));
    EXPECT_DOUBLE_EQ(loss(p, std::vector<Sample>{one}, c).loss, loss(p, std::vector<Sample>{two}, c).loss);
}

TEST(TrainLocal, ZeroLearningRateIsIdentity) {
    const ModelConfig c = small_config(32, 4, 4);
    const auto shard = generate_dataset(12, 32, 2, 3);
    const ParamVector p = init_model(c);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.epochs = 2;
    const TrainResult r = train_local(p, shard, tc, c);
    EXPECT_TRUE(r.params.bit_equal(p));
    EXPECT_EQ(r.epoch_loss.size(), 2u);
}

TEST(TrainLocal, DeterministicAndLengthPreserving) {
    const ModelConfig c = small_config(32, 4, 6);
    const auto shard = generate_dataset(25, 32, 2, 4);
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 12;
    const ParamVector p = init_model(c);
    const ParamVector before = p;
    const TrainResult a = train_local(p, shard, tc, c);
    const TrainResult b = train_local(p, shard, tc, c);
    EXPECT_TRUE(p.bit_equal(before));
    EXPECT_TRUE(a.params.bit_equal(b.params));
    EXPECT_EQ(a.params.size(), p.size());
    EXPECT_TRUE(a.params.all_finite());
}

TEST(TrainLocal, EpochsAreSeededIndependently) {
    // E epochs from seed s equal one epoch at s, then one at s+1, ...
    const ModelConfig c = small_config(32, 4, 5);
    const auto shard = generate_dataset(20, 32, 2, 5);
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 40;
    const ParamVector whole = train_local(init_model(c), shard, tc, c).params;
    ParamVector step = init_model(c);
    for (int e = 0; e < 3; ++e) {
        TrainConfig one = tc;
        one.epochs = 1;
        one.seed = tc.seed + static_cast<std::uint64_t>(e);
        step = train_local(step, shard, one, c).params;
    }
    EXPECT_TRUE(whole.bit_equal(step));
}

TEST(TrainLocal, LossDecreasesOnSmallShard) {
    const ModelConfig c = small_config(64, 4, 32, 2);
    const auto shard = generate_dataset(50, 64, 3, 6);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 10;
    tc.learning_rate = 0.05;
    tc.seed = 1;
    const TrainResult r = train_local(init_model(c), shard, tc, c);
    ASSERT_EQ(r.epoch_loss.size(), 30u);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
    EXPECT_TRUE(r.params.all_finite());
}

TEST(Nms, IdenticalBoxesKeepHigherScore) {
    const BoundingBox b{0.5, 0.5, 0.2, 0.2};
    const auto kept = non_max_suppression({{0, b, 0.8}, {0, b, 0.9}}, 0.5);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_EQ(kept[0].score, 0.9);
    // different classes never suppress each other
    EXPECT_EQ(non_max_suppression({{0, b, 0.8}, {1, b, 0.9}}, 0.5).size(), 2u);
}

TEST(Nms, SortedDescending) {
    Rng rng(8);
    std::vector<Detection> dets;
    for (int i = 0; i < 40; ++i)
        dets.push_back({uniform_int(rng, 0, 1),
                        {uniform_real(rng, 0.1, 0.9), uniform_real(rng, 0.1, 0.9), 0.1, 0.1},
                        unit_real(rng)});
    const auto kept = non_max_suppression(dets, 0.3);
    for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].score, kept[i].score);
    for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t j = i + 1; j < kept.size(); ++j)
            if (kept[i].class_id == kept[j].class_id) {
                EXPECT_LE(iou(kept[i].box, kept[j].box), 0.3);
            }
}

TEST(Predict, ThresholdOneIsEmpty) {
    const ModelConfig c = small_config(32, 4, 4);
    ParamVector p = fvtest::perturbed_params(c, 1);
    for (auto& v : p.values) v *= 10.0;
    const auto s = generate_dataset(5, 32, 3, 1);
    for (const auto& x : s) EXPECT_TRUE(predict(p, x.image, c, 1.0, 0.5).empty());
    EXPECT_THROW(predict(p, s[0].image, c, 1.5, 0.5), ConfigError);
}

TEST(Predict, BoxReconstructedFromCell) {
    const ModelConfig c = small_config(16, 2, 2);
    ParamVector p(param_count(c), 0.0);
    const ParamLayout L(c);
    // cell 3 (row 1, col 1): strong objectness, class 1, offsets 0.5, size sigmoid(0) = 0.5
    const std::size_t base = L.b2 + 3 * c.cell_stride();
    for (std::size_t cell = 0; cell < c.cells(); ++cell) p[L.b2 + cell * c.cell_stride()] = -10.0;
    p[base] = 10.0;
    p[base + 2] = 10.0;
    const auto dets = predict(p, RasterImage(16, 16, 1), c, 0.5, 0.5);
    ASSERT_EQ(dets.size(), 1u);
    EXPECT_EQ(dets[0].class_id, 1);
    EXPECT_NEAR(dets[0].box.cx, 0.75, 1e-12);
    EXPECT_NEAR(dets[0].box.cy, 0.75, 1e-12);
    EXPECT_NEAR(dets[0].box.w, 0.5, 1e-12);
}

TEST(Serialization, RoundTripAndHeader) {
    const ModelConfig c = small_config(32, 4, 3);
    const ParamVector p = fvtest::perturbed_params(c, 2);
    const std::string bytes = serialize_params(p, c);
    EXPECT_EQ(bytes.size(), 24 + 8 * p.size());
    EXPECT_EQ(read_param_header(bytes).count, p.size());
    EXPECT_TRUE(deserialize_params(bytes, c).bit_equal(p));
    // first value is little-endian IEEE-754
    const double first = p[0];
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(static_cast<unsigned char>(bytes[24 + i])) << (8 * i);
    EXPECT_EQ(std::bit_cast<double>(bits), first);

    ModelConfig other = c;
    other.hidden_units = 4;
    EXPECT_THROW(deserialize_params(bytes, other), RuntimeError);
    EXPECT_THROW(deserialize_params(bytes.substr(0, bytes.size() - 1), c), RuntimeError);
    ModelConfig reseeded = c;
    reseeded.seed = 99;
    EXPECT_NO_THROW(deserialize_params(bytes, reseeded));
}

TEST(EndToEnd, SingleRectangleDetectedOnHeldOutImages) {
    // images with at most one shape of either class
    const auto train = generate_dataset(5000, 64, 1, 11);
    GeneratorOptions rect_only;
    rect_only.min_objects = 1;
    rect_only.only_class = kClassPlate;
    const auto test = generate_dataset(100, 64, 1, 999, rect_only);

    ModelConfig c = small_config(64, 4, 64, 1);
    TrainConfig tc;
    tc.epochs = 25;
    tc.batch_size = 10;
    tc.learning_rate = 0.05;
    tc.seed = 7;
    const ParamVector p = train_local(init_model(c), train, tc, c).params;

    int hits = 0;
    for (const auto& s : test) {
        ASSERT_EQ(s.annotations.size(), 1u);
        const auto dets = predict(p, s.image, c, 0.2, 0.5);
        if (dets.size() == 1 && dets[0].class_id == kClassPlate && iou(dets[0].box, s.annotations[0].box) >= 0.5)
            ++hits;
    }
    EXPECT_GE(hits, 80);
}
