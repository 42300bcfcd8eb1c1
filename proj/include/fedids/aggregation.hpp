#pragma once

// Server-side aggregation rules over flat parameter vectors: averaging,
// coordinate-wise median, coordinate-wise trimmed mean, and the
// s-Resampling pre-step.

#include <algorithm>
#include <charconv>
#include <system_error>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "neuralnet.hpp"

namespace fedids {

enum class AggregationRule { avg, med, tm };

struct AggregationSpec {
	AggregationRule rule = AggregationRule::avg;
	std::size_t trim_c = 0;
	/// 0 disables s-Resampling.
	std::size_t resample_s = 0;

	bool operator==(const AggregationSpec &) const = default;

	/// "AVG", "MED", "TM(2)", "TM(2)+2-Resampling".
	std::string name() const
	{
		std::string s;
		switch (rule) {
		case AggregationRule::avg: s = "AVG"; break;
		case AggregationRule::med: s = "MED"; break;
		case AggregationRule::tm: s = "TM(" + std::to_string(trim_c) + ")"; break;
		}
		if (resample_s > 0)
			s += "+" + std::to_string(resample_s) + "-Resampling";
		return s;
	}
};

inline AggregationRule parse_aggregation_rule(std::string_view s)
{
	if (s == "AVG" || s == "avg")
		return AggregationRule::avg;
	if (s == "MED" || s == "med")
		return AggregationRule::med;
	if (s == "TM" || s == "tm")
		return AggregationRule::tm;
	throw ConfigError("unknown aggregation rule '" + std::string(s) + "'");
}

/// Inverse of AggregationSpec::name(): "AVG", "MED", "TM(2)",
/// "TM(2)+2-Resampling".
inline AggregationSpec parse_aggregation_name(std::string_view s)
{
	const auto bad = [&] { return ConfigError("cannot parse aggregation '" + std::string(s) + "'"); };
	auto number = [&](std::string_view t) {
		std::size_t v = 0;
		const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
		if (r.ec != std::errc() || r.ptr != t.data() + t.size() || t.empty())
			throw bad();
		return v;
	};
	AggregationSpec spec;
	std::string_view head = s;
	if (const auto plus = s.find('+'); plus != std::string_view::npos) {
		head = s.substr(0, plus);
		auto tail = s.substr(plus + 1);
		constexpr std::string_view suffix = "-Resampling";
		if (tail.size() <= suffix.size() || tail.substr(tail.size() - suffix.size()) != suffix)
			throw bad();
		spec.resample_s = number(tail.substr(0, tail.size() - suffix.size()));
	}
	if (head.starts_with("TM(") || head.starts_with("tm(")) {
		if (head.back() != ')')
			throw bad();
		spec.rule = AggregationRule::tm;
		spec.trim_c = number(head.substr(3, head.size() - 4));
	} else {
		spec.rule = parse_aggregation_rule(head);
	}
	return spec;
}

namespace detail {

inline void check_models(std::span<const ModelParameters> models)
{
	if (models.empty())
		throw ConfigError("aggregation needs at least one model");
	const auto &arch = models.front().arch;
	for (const auto &m : models) {
		if (!(m.arch == arch))
			throw DimensionError("cannot aggregate models of different architectures (" + arch.describe() + " vs " +
								 m.arch.describe() + ")");
		if (m.flat.size() != arch.parameter_count())
			throw DimensionError("parameter vector does not match its architecture");
	}
}

} // namespace detail

/// Coordinate-wise unweighted mean.
inline ModelParameters average(std::span<const ModelParameters> models)
{
	detail::check_models(models);
	ModelParameters out{models.front().arch, std::vector<double>(models.front().flat.size(), 0.0)};
	double k = 0.0;
	for (const auto &m : models) {
		k += 1.0;
		for (std::size_t i = 0; i < out.flat.size(); ++i)
			out.flat[i] += (m.flat[i] - out.flat[i]) / k;
	}
	return out;
}

/// Per-coordinate median; for even K the mean of the two middle values.
inline ModelParameters coordinate_median(std::span<const ModelParameters> models)
{
	detail::check_models(models);
	const std::size_t K = models.size();
	ModelParameters out{models.front().arch, std::vector<double>(models.front().flat.size())};
	std::vector<double> column(K);
	const auto mid = column.begin() + static_cast<std::ptrdiff_t>(K / 2);
	for (std::size_t i = 0; i < out.flat.size(); ++i) {
		for (std::size_t k = 0; k < K; ++k)
			column[k] = models[k].flat[i];
		std::nth_element(column.begin(), mid, column.end());
		if (K % 2 == 1) {
			out.flat[i] = *mid;
		} else {
			const double lower = *std::max_element(column.begin(), mid);
			out.flat[i] = 0.5 * (lower + *mid);
		}
	}
	return out;
}

/// Per-coordinate mean after dropping the c smallest and c largest values.
/// Ties at the cut are dropped by sorted position, so exactly K - 2c values
/// survive.
inline ModelParameters trimmed_mean(std::span<const ModelParameters> models, std::size_t c)
{
	detail::check_models(models);
	const std::size_t K = models.size();
	if (2 * c >= K)
		throw ConfigError("TM(" + std::to_string(c) + ") needs more than " + std::to_string(2 * c) + " models, got " +
						  std::to_string(K));
	ModelParameters out{models.front().arch, std::vector<double>(models.front().flat.size())};
	std::vector<double> column(K);
	for (std::size_t i = 0; i < out.flat.size(); ++i) {
		for (std::size_t k = 0; k < K; ++k)
			column[k] = models[k].flat[i];
		if (c > 0)
			std::sort(column.begin(), column.end());
		out.flat[i] = running_mean(std::span<const double>(column).subspan(c, K - 2 * c));
	}
	return out;
}

/// Sampling plan of s-Resampling: for each of the K outputs, the s input
/// indices it averages. Draws are uniform with rejection once an input has
/// been used s times, so every input is used exactly s times overall.
inline std::vector<std::vector<std::size_t>> resample_plan(std::size_t K, std::size_t s, Rng &rng)
{
	if (s == 0)
		throw ConfigError("s-Resampling needs s >= 1");
	constexpr std::size_t kMaxDraws = 1000000;
	std::vector<std::size_t> used(K, 0);
	std::vector<std::vector<std::size_t>> plan(K);
	for (auto &picks : plan) {
		picks.reserve(s);
		for (std::size_t i = 0; i < s; ++i) {
			std::size_t draws = 0;
			while (true) {
				if (++draws > kMaxDraws)
					throw ConfigError("s-Resampling rejection loop exceeded its draw cap");
				const auto j = rng.below(K);
				if (used[j] < s) {
					++used[j];
					picks.push_back(j);
					break;
				}
			}
		}
	}
	return plan;
}

/// Replace each model by the mean of s models drawn by `resample_plan`.
inline std::vector<ModelParameters> s_resample(std::span<const ModelParameters> models, std::size_t s, Rng &rng)
{
	detail::check_models(models);
	const auto plan = resample_plan(models.size(), s, rng);
	std::vector<ModelParameters> out;
	out.reserve(models.size());
	std::vector<ModelParameters> picked;
	for (const auto &picks : plan) {
		picked.clear();
		for (auto j : picks)
			picked.push_back(models[j]);
		out.push_back(average(picked));
	}
	return out;
}

/// Apply the optional resampling step then the rule.
inline ModelParameters aggregate(std::span<const ModelParameters> models, const AggregationSpec &spec, Rng &rng)
{
	std::vector<ModelParameters> resampled;
	if (spec.resample_s > 0) {
		resampled = s_resample(models, spec.resample_s, rng);
		models = resampled;
	}
	switch (spec.rule) {
	case AggregationRule::med: return coordinate_median(models);
	case AggregationRule::tm: return trimmed_mean(models, spec.trim_c);
	case AggregationRule::avg: break;
	}
	return average(models);
}

} // namespace fedids
