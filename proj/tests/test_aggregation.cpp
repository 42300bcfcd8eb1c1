#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "support.hpp"

using namespace fedids;
using namespace fedids::testing;

namespace {

std::vector<ModelParameters> scalar_models(const std::vector<double> &values)
{
	std::vector<ModelParameters> out;
	for (double v : values)
		out.push_back({flat_arch(1), {v}});
	return out;
}

double oracle_median(std::vector<double> col)
{
	std::sort(col.begin(), col.end());
	const auto K = col.size();
	return K % 2 ? col[K / 2] : 0.5 * (col[K / 2 - 1] + col[K / 2]);
}

double oracle_trimmed(std::vector<double> col, std::size_t c)
{
	std::sort(col.begin(), col.end());
	long double s = 0.0L;
	for (std::size_t i = c; i < col.size() - c; ++i)
		s += col[i];
	return static_cast<double>(s / static_cast<long double>(col.size() - 2 * c));
}

} // namespace

TEST(Average, IdenticalModels)
{
	Rng rng(1);
	const auto one = random_models(flat_arch(10), 1, rng)[0];
	const std::vector<ModelParameters> same(5, one);
	EXPECT_EQ(average(same), one);
	EXPECT_EQ(coordinate_median(same), one);
	EXPECT_EQ(trimmed_mean(same, 2), one);
}

TEST(Average, TwoValues) { EXPECT_EQ(average(scalar_models({1, 3})).flat[0], 2.0); }

TEST(Average, CancellerGivesZero)
{
	Rng rng(2);
	auto w = random_models(flat_arch(50), 1, rng)[0];
	std::vector<ModelParameters> sub(7, w);
	sub.push_back(cancel_update(w, -7.0));
	for (double x : average(sub).flat)
		EXPECT_EQ(x, 0.0);
}

TEST(Average, Linear)
{
	Rng rng(3);
	const auto ms = random_models(flat_arch(20), 6, rng);
	auto scaled = ms;
	for (auto &m : scaled)
		for (auto &x : m.flat)
			x *= 2.0;
	const auto a = average(ms);
	const auto b = average(scaled);
	for (std::size_t i = 0; i < a.flat.size(); ++i)
		EXPECT_EQ(b.flat[i], 2.0 * a.flat[i]);
}

TEST(Average, Errors)
{
	EXPECT_THROW(average(std::vector<ModelParameters>{}), ConfigError);
	std::vector<ModelParameters> mixed{{flat_arch(3), {0, 0, 0}}, {ArchitectureSpec{ModelKind::autoencoder, 1, {}, 1}, {0, 0}}};
	EXPECT_THROW(average(mixed), DimensionError);
	EXPECT_THROW(coordinate_median(mixed), DimensionError);
	// same d, different descriptor
	std::vector<ModelParameters> same_d{{flat_arch(3), {0, 0, 0}}, {ArchitectureSpec{ModelKind::autoencoder, 1, {}, 1}, {0, 0, 0}}};
	EXPECT_THROW(average(same_d), DimensionError);
}

TEST(Median, EvenK) { EXPECT_EQ(coordinate_median(scalar_models({8, 3, 1, 6, 2, 7, 5, 4})).flat[0], 4.5); }

TEST(Median, OutlierIgnored) { EXPECT_EQ(coordinate_median(scalar_models({1, 2, 1e9})).flat[0], 2.0); }

TEST(Median, SortOracleK5)
{
	Rng rng(4);
	const auto ms = random_models(flat_arch(40), 5, rng);
	const auto med = coordinate_median(ms);
	for (std::size_t i = 0; i < 40; ++i)
		EXPECT_EQ(med.flat[i], sorted_column(ms, i)[2]);
}

TEST(TrimmedMean, ZeroTrimIsAverageBitwise)
{
	Rng rng(5);
	const auto ms = random_models(flat_arch(33), 7, rng);
	EXPECT_EQ(trimmed_mean(ms, 0), average(ms));
}

TEST(TrimmedMean, DropsExtremes) { EXPECT_EQ(trimmed_mean(scalar_models({0, 1, 2, 3, 100}), 1).flat[0], 2.0); }

TEST(TrimmedMean, SortOracleK8)
{
	Rng rng(6);
	const auto ms = random_models(flat_arch(64), 8, rng);
	const auto tm = trimmed_mean(ms, 2);
	for (std::size_t i = 0; i < 64; ++i) {
		const auto ref = oracle_trimmed(sorted_column(ms, i), 2);
		EXPECT_LE(std::abs(tm.flat[i] - ref), 1e-12 * std::max(1.0, std::abs(ref)));
	}
}

TEST(TrimmedMean, TiesTrimmedByPosition)
{
	EXPECT_EQ(trimmed_mean(scalar_models({1, 1, 1, 5, 9, 9}), 2).flat[0], 3.0);
}

TEST(TrimmedMean, TooLargeC)
{
	EXPECT_THROW(trimmed_mean(scalar_models({1, 2, 3, 4}), 2), ConfigError);
	EXPECT_NO_THROW(trimmed_mean(scalar_models({1, 2, 3, 4, 5}), 2));
}

TEST(Robust, WithinRanges)
{
	Rng rng(7);
	for (int trial = 0; trial < 50; ++trial) {
		const std::size_t K = 3 + rng.below(7);
		const auto ms = random_models(flat_arch(10), K, rng);
		const auto med = coordinate_median(ms);
		const std::size_t c = (K - 1) / 2;
		const auto tm = trimmed_mean(ms, c);
		for (std::size_t i = 0; i < 10; ++i) {
			const auto col = sorted_column(ms, i);
			EXPECT_GE(med.flat[i], col.front());
			EXPECT_LE(med.flat[i], col.back());
			EXPECT_GE(tm.flat[i], col[c]);
			EXPECT_LE(tm.flat[i], col[K - 1 - c]);
		}
	}
}

TEST(Robust, BreakdownPoint)
{
	Rng rng(8);
	for (std::size_t K : {3u, 5u, 8u}) {
		auto ms = random_models(flat_arch(6), K, rng);
		for (double huge : {1e12, -1e12}) {
			auto bad = ms;
			bad[0].flat[3] = huge;
			double lo = ms[1].flat[3], hi = lo;
			for (std::size_t k = 1; k < K; ++k) {
				lo = std::min(lo, ms[k].flat[3]);
				hi = std::max(hi, ms[k].flat[3]);
			}
			const double spread = hi - lo;
			EXPECT_LE(std::abs(coordinate_median(bad).flat[3] - coordinate_median(ms).flat[3]), spread);
			EXPECT_LE(std::abs(trimmed_mean(bad, 1).flat[3] - trimmed_mean(ms, 1).flat[3]), spread);
		}
	}
}

TEST(Robust, PermutationInvariant)
{
	Rng rng(9);
	auto ms = random_models(flat_arch(12), 6, rng);
	const auto avg = average(ms), med = coordinate_median(ms), tm = trimmed_mean(ms, 1);
	for (int t = 0; t < 10; ++t) {
		rng.shuffle(ms);
		EXPECT_EQ(coordinate_median(ms), med);
		EXPECT_EQ(trimmed_mean(ms, 1).flat.size(), tm.flat.size());
		const auto a2 = average(ms);
		const auto t2 = trimmed_mean(ms, 1);
		for (std::size_t i = 0; i < 12; ++i) {
			EXPECT_NEAR(a2.flat[i], avg.flat[i], 1e-12);
			EXPECT_NEAR(t2.flat[i], tm.flat[i], 1e-12);
		}
	}
}

TEST(Resample, SOneIsPermutation)
{
	Rng rng(10);
	const auto ms = scalar_models({1, 2, 3, 4, 5, 6, 7, 8});
	const auto out = s_resample(ms, 1, rng);
	std::vector<double> vals;
	for (const auto &m : out)
		vals.push_back(m.flat[0]);
	std::sort(vals.begin(), vals.end());
	EXPECT_EQ(vals, (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Resample, DrawCounts)
{
	Rng rng(11);
	for (std::size_t K : {3u, 8u, 9u})
		for (std::size_t s : {1u, 2u, 3u}) {
			const auto plan = resample_plan(K, s, rng);
			ASSERT_EQ(plan.size(), K);
			std::map<std::size_t, std::size_t> used;
			std::size_t total = 0;
			for (const auto &p : plan) {
				EXPECT_EQ(p.size(), s);
				for (auto j : p)
					++used[j];
				total += p.size();
			}
			EXPECT_EQ(total, K * s);
			for (const auto &[j, c] : used)
				EXPECT_EQ(c, s);
		}
}

TEST(Resample, PreservesGrandMean)
{
	Rng rng(12);
	const auto ms = random_models(flat_arch(16), 8, rng);
	const auto out = s_resample(ms, 2, rng);
	const auto a = average(ms), b = average(out);
	for (std::size_t i = 0; i < 16; ++i)
		EXPECT_NEAR(a.flat[i], b.flat[i], 1e-12);
}

TEST(Resample, OutputMultisetDeterministicUnderSeed)
{
	Rng a(13), b(13);
	const auto ms = scalar_models({5, 1, 4, 2, 3});
	auto x = s_resample(ms, 2, a), y = s_resample(ms, 2, b);
	EXPECT_EQ(x, y);
	EXPECT_THROW(resample_plan(4, 0, a), ConfigError);
}

TEST(Aggregate, DispatchAndNames)
{
	Rng rng(14);
	const auto ms = scalar_models({0, 1, 2, 3, 100});
	EXPECT_EQ(aggregate(ms, {AggregationRule::avg, 0, 0}, rng).flat[0], 21.2);
	EXPECT_EQ(aggregate(ms, {AggregationRule::med, 0, 0}, rng).flat[0], 2.0);
	EXPECT_EQ(aggregate(ms, {AggregationRule::tm, 1, 0}, rng).flat[0], 2.0);
	EXPECT_EQ((AggregationSpec{AggregationRule::tm, 2, 2}).name(), "TM(2)+2-Resampling");
	for (const auto &spec : {AggregationSpec{AggregationRule::avg, 0, 0}, AggregationSpec{AggregationRule::med, 0, 3},
							 AggregationSpec{AggregationRule::tm, 2, 2}})
		EXPECT_EQ(parse_aggregation_name(spec.name()), spec);
	EXPECT_THROW(parse_aggregation_name("TM(x)"), ConfigError);
	EXPECT_THROW(parse_aggregation_name("KRUM"), ConfigError);
}

TEST(Aggregate, ResampledAverageEqualsAverage)
{
	Rng rng(15);
	const auto ms = random_models(flat_arch(16), 8, rng);
	const auto plain = average(ms);
	const auto res = aggregate(ms, {AggregationRule::avg, 0, 2}, rng);
	for (std::size_t i = 0; i < 16; ++i)
		EXPECT_NEAR(res.flat[i], plain.flat[i], 1e-12);
}

TEST(Aggregate, RandomOracleSweep)
{
	Rng rng(16);
	for (int trial = 0; trial < 200; ++trial) {
		const std::size_t K = 3 + rng.below(7);
		const std::size_t d = 1 + rng.below(64);
		const auto ms = random_models(flat_arch(d), K, rng);
		const auto med = coordinate_median(ms);
		for (std::size_t i = 0; i < d; ++i) {
			std::vector<double> col;
			for (const auto &m : ms)
				col.push_back(m.flat[i]);
			EXPECT_EQ(med.flat[i], oracle_median(col));
		}
	}
}
