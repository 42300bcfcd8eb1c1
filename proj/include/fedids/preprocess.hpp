#pragma once

// Min-max feature scaling and the collaborative min/max exchange.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "dataset.hpp"

namespace fedids {

struct ScalingBounds {
	std::vector<double> x_min;
	std::vector<double> x_max;

	std::size_t dim() const { return x_min.size(); }
	bool operator==(const ScalingBounds &) const = default;
};

/// Client side: element-wise min and max over the client's own train set.
inline ScalingBounds local_min_max(std::span<const Sample> train)
{
	if (train.empty())
		throw EmptyPartError("cannot compute scaling bounds of an empty train set");
	ScalingBounds b{train.front().features, train.front().features};
	for (const auto &s : train) {
		if (s.features.size() != b.dim())
			throw DimensionError("inconsistent feature count in train set");
		for (std::size_t j = 0; j < b.dim(); ++j) {
			b.x_min[j] = std::min(b.x_min[j], s.features[j]);
			b.x_max[j] = std::max(b.x_max[j], s.features[j]);
		}
	}
	return b;
}

/// Server side: element-wise min of the mins and max of the maxes. Equal to
/// the bounds of the concatenated train sets.
inline ScalingBounds merge_bounds(std::span<const ScalingBounds> bounds)
{
	if (bounds.empty())
		throw ConfigError("merge_bounds needs at least one client");
	ScalingBounds out = bounds.front();
	for (const auto &b : bounds.subspan(1)) {
		if (b.dim() != out.dim())
			throw DimensionError("clients report bounds of different dimension");
		for (std::size_t j = 0; j < out.dim(); ++j) {
			out.x_min[j] = std::min(out.x_min[j], b.x_min[j]);
			out.x_max[j] = std::max(out.x_max[j], b.x_max[j]);
		}
	}
	return out;
}

/// x' = (x - x_min) / (x_max - x_min). Constant coordinates map to 0; values
/// outside the bounds are not clamped.
inline Sample scale(const Sample &sample, const ScalingBounds &bounds)
{
	if (sample.features.size() != bounds.dim())
		throw DimensionError("sample has " + std::to_string(sample.features.size()) + " features, bounds have " +
							 std::to_string(bounds.dim()));
	Sample out = sample;
	for (std::size_t j = 0; j < bounds.dim(); ++j) {
		const double range = bounds.x_max[j] - bounds.x_min[j];
		out.features[j] = range > 0.0 ? (sample.features[j] - bounds.x_min[j]) / range : 0.0;
	}
	return out;
}

inline std::vector<Sample> scale_all(std::span<const Sample> samples, const ScalingBounds &bounds)
{
	std::vector<Sample> out;
	out.reserve(samples.size());
	for (const auto &s : samples)
		out.push_back(scale(s, bounds));
	return out;
}

inline DevicePartition scale_partition(const DevicePartition &p, const ScalingBounds &bounds)
{
	DevicePartition out;
	out.device_id = p.device_id;
	out.train = scale_all(p.train, bounds);
	out.threshold_sel = scale_all(p.threshold_sel, bounds);
	out.unused = p.unused;
	out.test = scale_all(p.test, bounds);
	return out;
}

/// Two-row CSV: mins then maxes.
inline void write_bounds_csv(const std::filesystem::path &path, const ScalingBounds &b)
{
	std::ofstream out(path);
	if (!out)
		throw IoError("cannot write '" + path.string() + "'");
	char buf[32];
	for (const auto *row : {&b.x_min, &b.x_max}) {
		for (std::size_t j = 0; j < row->size(); ++j) {
			if (j)
				out << ',';
			const auto r = std::to_chars(buf, buf + sizeof buf, (*row)[j]);
			out.write(buf, r.ptr - buf);
		}
		out << '\n';
	}
}

inline ScalingBounds read_bounds_csv(const std::filesystem::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot open '" + path.string() + "'");
	ScalingBounds b;
	std::string line;
	for (auto *row : {&b.x_min, &b.x_max}) {
		if (!std::getline(in, line))
			throw SchemaError(path.string() + ": expected two rows");
		for (auto cell : detail::split_commas(line)) {
			const auto v = detail::parse_double(cell);
			if (!v)
				throw ParseError(path.string() + ": non-numeric cell '" + std::string(cell) + "'");
			row->push_back(*v);
		}
	}
	if (b.x_min.size() != b.x_max.size())
		throw SchemaError(path.string() + ": min and max rows differ in length");
	return b;
}

} // namespace fedids
