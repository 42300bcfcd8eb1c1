#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace fedids;
using namespace fedids::testing;

TEST(Architecture, ParameterCounts)
{
	EXPECT_EQ(classifier_preset('A').parameter_count(), 116u);
	EXPECT_EQ(autoencoder_preset('A').parameter_count(), 115u * 29 + 29 + 29 * 115 + 115);
	EXPECT_EQ(autoencoder_preset('A').parameter_count(), 6814u);
}

TEST(Architecture, PresetWidths)
{
	EXPECT_EQ(classifier_preset('D').hidden, (std::vector<std::size_t>{115, 58, 29}));
	EXPECT_EQ(autoencoder_preset('B').hidden, (std::vector<std::size_t>{58, 29, 58}));
	EXPECT_EQ(autoencoder_preset('C').hidden, (std::vector<std::size_t>{86, 58, 38, 29, 38, 58, 86}));
	EXPECT_EQ(parse_architecture("classifier-C"), classifier_preset('C'));
	EXPECT_EQ(parse_architecture("autoencoder:7,3", 10).hidden, (std::vector<std::size_t>{7, 3}));
	EXPECT_THROW(parse_architecture("classifier-Z"), ConfigError);
	EXPECT_THROW(parse_architecture("perceptron"), ConfigError);
}

TEST(Init, DeterministicAndGlorot)
{
	const auto arch = classifier_preset('C', 20);
	const auto a = init_model(arch, 5);
	const auto b = init_model(arch, 5);
	EXPECT_EQ(a.flat, b.flat);
	EXPECT_NE(a.flat, init_model(arch, 6).flat);
	Network net(arch);
	const auto mask = net.weight_mask();
	const auto w = arch.widths();
	std::size_t off = 0;
	for (std::size_t l = 0; l + 1 < w.size(); ++l) {
		const double limit = std::sqrt(6.0 / static_cast<double>(w[l] + w[l + 1]));
		for (std::size_t i = 0; i < w[l] * w[l + 1]; ++i) {
			EXPECT_TRUE(mask[off + i]);
			EXPECT_LE(std::abs(a.flat[off + i]), limit);
		}
		off += w[l] * w[l + 1];
		for (std::size_t i = 0; i < w[l + 1]; ++i) {
			EXPECT_FALSE(mask[off + i]);
			EXPECT_EQ(a.flat[off + i], 0.0);
		}
		off += w[l + 1];
	}
}

TEST(Forward, ZeroWeightClassifierIsHalf)
{
	ModelParameters m{classifier_preset('C', 6), std::vector<double>(classifier_preset('C', 6).parameter_count(), 0.0)};
	const auto out = forward(m, random_samples(3, 6, 1));
	for (const auto &o : out)
		EXPECT_EQ(o[0], 0.5);
}

TEST(Forward, Elu)
{
	EXPECT_EQ(elu(2.5), 2.5);
	EXPECT_EQ(elu(0.0), 0.0);
	EXPECT_DOUBLE_EQ(elu(-1.0), std::exp(-1.0) - 1.0);
}

TEST(Forward, MatchesDenseOracle)
{
	for (const auto &arch : {classifier_preset('D', 9), autoencoder_preset('B', 9), autoencoder_preset('C', 12)}) {
		const auto m = init_model(arch, 31);
		const auto batch = random_samples(5, arch.input_dim, 3);
		const auto out = forward(m, batch);
		for (std::size_t i = 0; i < batch.size(); ++i) {
			const auto ref = oracle_forward(m, batch[i].features);
			ASSERT_EQ(out[i].size(), ref.size());
			for (std::size_t j = 0; j < ref.size(); ++j)
				EXPECT_NEAR(out[i][j], ref[j], 1e-12 * (1.0 + std::abs(ref[j])));
		}
	}
}

TEST(Forward, DimensionMismatch)
{
	const auto m = init_model(classifier_preset('B', 5), 1);
	EXPECT_THROW(forward(m, random_samples(1, 4, 1)), DimensionError);
}

TEST(Loss, HalfProbabilityIsLn2)
{
	const auto arch = classifier_preset('B', 4);
	ModelParameters m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
	for (int y : {0, 1}) {
		std::vector<Sample> b{make_sample({0.1, 0.2, 0.3, 0.4}, y)};
		EXPECT_NEAR(loss(m, b), std::log(2.0), 1e-15);
	}
}

TEST(Loss, PerfectReconstructionIsZeroPlusL2)
{
	// Linear autoencoder with identity weights is exact on any input.
	ArchitectureSpec arch{ModelKind::autoencoder, 3, {}, 3};
	ModelParameters m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
	for (std::size_t i = 0; i < 3; ++i)
		m.flat[i * 3 + i] = 1.0;
	const auto batch = random_samples(4, 3, 2);
	EXPECT_EQ(loss(m, batch), 0.0);
	EXPECT_DOUBLE_EQ(loss(m, batch, 0.5), 0.5 * 3.0);
	for (double e : mse_per_sample(m, batch))
		EXPECT_EQ(e, 0.0);
}

TEST(Loss, L2OnUnitNormWeights)
{
	ArchitectureSpec arch{ModelKind::classifier, 2, {}, 1};
	ModelParameters m{arch, {0.6, 0.8, 5.0}};
	std::vector<Sample> b{make_sample({0, 0}, 1)};
	const double data = loss(m, b);
	EXPECT_NEAR(loss(m, b, 1e-4) - data, 1e-4, 1e-15);
}

TEST(Loss, EmptyBatch)
{
	const auto m = init_model(classifier_preset('A', 3), 1);
	EXPECT_THROW(loss(m, std::vector<Sample>{}), EmptyPartError);
	EXPECT_THROW(backward(m, std::vector<Sample>{}), EmptyPartError);
}

TEST(Gradient, BalancedConstantInputOutputBiasZero)
{
	const auto arch = classifier_preset('C', 4);
	ModelParameters m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
	std::vector<Sample> b{make_sample({1, 1, 1, 1}, 0), make_sample({1, 1, 1, 1}, 1)};
	const auto g = backward(m, b);
	EXPECT_EQ(g.back(), 0.0);
}

TEST(Gradient, L2OnlyWhenDataGradientZero)
{
	// Balanced labels at p = 0.5 on zero input: the data gradient vanishes on
	// every weight, leaving 2 * lambda * w.
	ArchitectureSpec arch{ModelKind::classifier, 3, {}, 1};
	ModelParameters m{arch, {0.3, -0.2, 0.7, 0.0}};
	std::vector<Sample> b{make_sample({0, 0, 0}, 0), make_sample({0, 0, 0}, 1)};
	const double lambda = 0.01;
	const auto g = backward(m, b, lambda);
	for (std::size_t i = 0; i < 3; ++i)
		EXPECT_NEAR(g[i], 2.0 * lambda * m.flat[i], 1e-15);
}

TEST(Gradient, FiniteDifferencesEveryPreset)
{
	for (const auto &arch : all_presets(12))
		for (double l2 : {0.0, 1e-4})
			EXPECT_LT(max_fd_relative_error(arch, l2, 17), 1e-4) << arch.describe() << " l2=" << l2;
}

TEST(Sgd, Arithmetic)
{
	ArchitectureSpec arch{ModelKind::classifier, 0, {}, 1};
	ModelParameters m{arch, {1.0}};
	EXPECT_DOUBLE_EQ(sgd_step(m, std::vector<double>{0.5}, 0.1).flat[0], 0.95);
	EXPECT_EQ(sgd_step(m, std::vector<double>{123.0}, 0.0).flat, m.flat);
}

TEST(Sgd, TwoStepsWithFixedGradient)
{
	const auto m = init_model(classifier_preset('B', 3), 4);
	std::vector<double> g(m.flat.size());
	for (std::size_t i = 0; i < g.size(); ++i)
		g[i] = 0.25 * static_cast<double>(i % 5);
	const auto twice = sgd_step(sgd_step(m, g, 0.5), g, 0.5);
	std::vector<double> sum(g.size());
	for (std::size_t i = 0; i < g.size(); ++i)
		sum[i] = 2.0 * g[i];
	EXPECT_EQ(twice.flat, sgd_step(m, sum, 0.5).flat);
}

TEST(Sgd, NonFiniteIsPoisoned)
{
	const auto m = init_model(classifier_preset('A', 2), 1);
	std::vector<double> g(m.flat.size(), 0.0);
	g[1] = std::numeric_limits<double>::quiet_NaN();
	EXPECT_THROW(sgd_step(m, g, 0.1), PoisonedUpdateError);
	g[1] = std::numeric_limits<double>::infinity();
	EXPECT_THROW(sgd_step(m, g, 0.1), PoisonedUpdateError);
}

TEST(Mse, ZeroOutputOnOneHotRows)
{
	const auto arch = autoencoder_preset('A');
	ModelParameters m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
	std::vector<Sample> rows;
	for (std::size_t j = 0; j < 3; ++j) {
		std::vector<double> x(115, 0.0);
		x[j] = 1.0;
		rows.push_back(make_sample(x));
	}
	for (double e : mse_per_sample(m, rows))
		EXPECT_DOUBLE_EQ(e, 1.0 / 115.0);
}

TEST(Mse, MatchesDirectFormula)
{
	const auto arch = autoencoder_preset('B', 10);
	const auto m = init_model(arch, 8);
	const auto rows = random_samples(6, 10, 9);
	const auto mse = mse_per_sample(m, rows);
	for (std::size_t i = 0; i < rows.size(); ++i) {
		const auto r = oracle_forward(m, rows[i].features);
		double se = 0.0;
		for (std::size_t j = 0; j < 10; ++j)
			se += (r[j] - rows[i].features[j]) * (r[j] - rows[i].features[j]);
		EXPECT_NEAR(mse[i], se / 10.0, 1e-12);
	}
}

TEST(Mse, ClassifierIsKindError)
{
	const auto m = init_model(classifier_preset('B', 3), 1);
	EXPECT_THROW(mse_per_sample(m, random_samples(1, 3, 1)), KindError);
}

TEST(Training, SeparableToyReachesFullAccuracy)
{
	std::vector<Sample> data;
	Rng rng(3);
	for (std::size_t i = 0; i < 200; ++i) {
		const double a = rng.uniform(), b = rng.uniform();
		if (std::abs(a - b) < 0.05)
			continue;
		data.push_back(make_sample({a, b}, a > b ? kAttack : kBenign, static_cast<std::int64_t>(i)));
	}
	for (char preset : {'A', 'B', 'C', 'D'}) {
		auto m = init_model(classifier_preset(preset, 2), 1);
		OptimizerConfig opt{0.5, 0.0, 16};
		const std::size_t epochs = 200 / batches_per_epoch(data.size(), 16) + 40;
		m = train_local(m, data, epochs, opt, 5);
		std::size_t correct = 0;
		const auto p = predict_proba(m, data);
		for (std::size_t i = 0; i < data.size(); ++i)
			correct += classify(p[i]) == *data[i].label;
		EXPECT_EQ(correct, data.size()) << "classifier-" << preset;
	}
}

TEST(Training, FullBatchLossNonIncreasing)
{
	for (const auto &arch : {classifier_preset('C', 6), autoencoder_preset('B', 6)}) {
		auto m = init_model(arch, 2);
		const auto batch = random_samples(16, 6, 4);
		double prev = loss(m, batch, 1e-4);
		for (int step = 0; step < 50; ++step) {
			m = sgd_step(m, backward(m, batch, 1e-4), 0.01);
			const double cur = loss(m, batch, 1e-4);
			EXPECT_LE(cur, prev + 1e-15);
			prev = cur;
		}
	}
}

TEST(Checkpoint, BinaryAndTextRoundTrip)
{
	TempDir dir;
	for (const auto &arch : all_presets(15)) {
		const auto m = init_model(arch, 99);
		save_model_binary(dir.path() / "m.bin", m);
		save_model_text(dir.path() / "m.txt", m);
		EXPECT_EQ(load_model(dir.path() / "m.bin"), m);
		EXPECT_EQ(load_model(dir.path() / "m.txt"), m);
	}
}

TEST(Checkpoint, CorruptFile)
{
	TempDir dir;
	write_text(dir.path() / "bad", "not a model\n");
	EXPECT_ANY_THROW(load_model(dir.path() / "bad"));
	EXPECT_THROW(load_model(dir.path() / "missing"), IoError);
}
