#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unistd.h>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fedids/fedids.hpp"

namespace fedids::testing {

inline Sample make_sample(std::vector<double> features, std::optional<int> label = std::nullopt, std::int64_t seq = 0)
{
	return {std::move(features), label, seq};
}

/// n samples of dimension F with uniform features in [lo, hi) and alternating
/// labels; seq_index 0..n-1.
inline std::vector<Sample> random_samples(std::size_t n, std::size_t F, std::uint64_t seed, double lo = 0.0,
										  double hi = 1.0)
{
	Rng rng(seed);
	std::vector<Sample> out(n);
	for (std::size_t i = 0; i < n; ++i) {
		out[i].features.resize(F);
		for (auto &x : out[i].features)
			x = rng.uniform(lo, hi);
		out[i].label = static_cast<int>(i % 2);
		out[i].seq_index = static_cast<std::int64_t>(i);
	}
	return out;
}

inline std::vector<ModelParameters> random_models(const ArchitectureSpec &arch, std::size_t K, Rng &rng,
												  double scale = 1.0)
{
	std::vector<ModelParameters> out;
	for (std::size_t k = 0; k < K; ++k) {
		ModelParameters m{arch, std::vector<double>(arch.parameter_count())};
		for (auto &w : m.flat)
			w = scale * rng.normal();
		out.push_back(std::move(m));
	}
	return out;
}

/// A classifier architecture whose flat vector has exactly d entries:
/// no hidden layer and d - 1 inputs.
inline ArchitectureSpec flat_arch(std::size_t d)
{
	return {ModelKind::classifier, d - 1, {}, 1};
}

/// Per-coordinate column of a model list, sorted.
inline std::vector<double> sorted_column(const std::vector<ModelParameters> &models, std::size_t i)
{
	std::vector<double> col;
	for (const auto &m : models)
		col.push_back(m.flat[i]);
	std::sort(col.begin(), col.end());
	return col;
}

/// Independent dense forward pass straight from the flat layout (weights
/// row-major [out][in], then biases, per layer).
inline std::vector<double> oracle_forward(const ModelParameters &m, const std::vector<double> &x)
{
	const auto w = m.arch.widths();
	std::vector<double> a = x;
	std::size_t off = 0;
	for (std::size_t l = 0; l + 1 < w.size(); ++l) {
		std::vector<double> z(w[l + 1]);
		for (std::size_t o = 0; o < w[l + 1]; ++o) {
			double acc = m.flat[off + w[l] * w[l + 1] + o];
			for (std::size_t i = 0; i < w[l]; ++i)
				acc += m.flat[off + o * w[l] + i] * a[i];
			z[o] = acc;
		}
		off += w[l] * w[l + 1] + w[l + 1];
		const bool last = l + 2 == w.size();
		for (auto &v : z)
			v = last ? (m.arch.kind == ModelKind::classifier ? 1.0 / (1.0 + std::exp(-v)) : v)
					 : (v > 0 ? v : std::exp(v) - 1.0);
		a = std::move(z);
	}
	return a;
}

/// Maximum relative error between analytic and central-difference gradients
/// over `coords` random coordinates. Relative error is |a - n| / max(|a|, |n|)
/// with the denominator floored at `floor`.
inline double max_fd_relative_error(const ArchitectureSpec &arch, double l2, std::uint64_t seed,
									std::size_t coords = 100, double eps = 1e-5, double floor = 1e-6)
{
	auto model = init_model(arch, seed);
	Rng rng(seed ^ 0x5eedULL);
	for (std::size_t i = 0; i < model.flat.size(); ++i)
		if (model.flat[i] == 0.0)
			model.flat[i] = 0.1 * rng.normal();
	auto batch = random_samples(4, arch.input_dim, seed + 1);
	const auto analytic = backward(model, batch, l2);
	double worst = 0.0;
	for (std::size_t c = 0; c < coords; ++c) {
		const auto i = rng.below(model.flat.size());
		auto plus = model;
		auto minus = model;
		plus.flat[i] += eps;
		minus.flat[i] -= eps;
		const double numeric = (loss(plus, batch, l2) - loss(minus, batch, l2)) / (2.0 * eps);
		const double den = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
		worst = std::max(worst, std::abs(analytic[i] - numeric) / den);
	}
	return worst;
}

inline std::vector<ArchitectureSpec> all_presets(std::size_t F = kNumFeatures)
{
	std::vector<ArchitectureSpec> out;
	for (char c : {'A', 'B', 'C', 'D'})
		out.push_back(classifier_preset(c, F));
	for (char c : {'A', 'B', 'C'})
		out.push_back(autoencoder_preset(c, F));
	return out;
}

class TempDir {
public:
	TempDir()
	{
		static int counter = 0;
		path_ = std::filesystem::temp_directory_path() /
				("fedids-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
		std::filesystem::create_directories(path_);
	}
	~TempDir() { std::filesystem::remove_all(path_); }
	const std::filesystem::path &path() const { return path_; }

private:
	std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path &p, const std::string &text)
{
	std::ofstream(p) << text;
}

} // namespace fedids::testing
