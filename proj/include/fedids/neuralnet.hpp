#pragma once

// Dense feed-forward networks built from scratch: the classifier and
// autoencoder presets, ELU hidden layers, BCE / MSE losses with L2 on the
// weights, reverse-mode gradients and plain SGD. Parameters live in one flat
// vector (layer by layer: weights row-major [out][in], then biases) so the
// server can aggregate them coordinate-wise.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "dataset.hpp"

namespace fedids {

enum class ModelKind : std::uint8_t { classifier = 0, autoencoder = 1 };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::classifier ? "classifier" : "autoencoder"; }

struct ArchitectureSpec {
	ModelKind kind = ModelKind::classifier;
	std::size_t input_dim = kNumFeatures;
	std::vector<std::size_t> hidden;
	std::size_t output_dim = 1;

	bool operator==(const ArchitectureSpec &) const = default;

	/// Layer widths including input and output.
	std::vector<std::size_t> widths() const
	{
		std::vector<std::size_t> w{input_dim};
		w.insert(w.end(), hidden.begin(), hidden.end());
		w.push_back(output_dim);
		return w;
	}

	std::size_t parameter_count() const
	{
		const auto w = widths();
		std::size_t d = 0;
		for (std::size_t l = 0; l + 1 < w.size(); ++l)
			d += w[l] * w[l + 1] + w[l + 1];
		return d;
	}

	/// Human-readable descriptor, e.g. "classifier[115,58]".
	std::string describe() const
	{
		std::string s(to_string(kind));
		s += '[';
		for (std::size_t i = 0; i < hidden.size(); ++i) {
			if (i)
				s += ',';
			s += std::to_string(hidden[i]);
		}
		return s + ']';
	}
};

namespace detail {

/// Width as a fraction of the input dimension, rounded half up, at least 1.
/// For 115 inputs this reproduces 115 / 86 / 58 / 38 / 29.
inline std::size_t scaled_width(std::size_t input_dim, double fraction)
{
	const auto w = static_cast<std::size_t>(std::floor(static_cast<double>(input_dim) * fraction + 0.5));
	return std::max<std::size_t>(w, 1);
}

} // namespace detail

/// Classifier presets 'A'..'D': no hidden layer, [100%], [100%, 50%],
/// [100%, 50%, 25%] of the input width.
inline ArchitectureSpec classifier_preset(char preset, std::size_t input_dim = kNumFeatures)
{
	const auto full = detail::scaled_width(input_dim, 1.0);
	const auto half = detail::scaled_width(input_dim, 0.5);
	const auto quarter = detail::scaled_width(input_dim, 0.25);
	ArchitectureSpec a{ModelKind::classifier, input_dim, {}, 1};
	switch (preset) {
	case 'A': break;
	case 'B': a.hidden = {full}; break;
	case 'C': a.hidden = {full, half}; break;
	case 'D': a.hidden = {full, half, quarter}; break;
	default: throw ConfigError(std::string("unknown classifier preset '") + preset + "'");
	}
	return a;
}

/// Autoencoder presets 'A'..'C', all with a 25% coding layer.
inline ArchitectureSpec autoencoder_preset(char preset, std::size_t input_dim = kNumFeatures)
{
	const auto code = detail::scaled_width(input_dim, 0.25);
	const auto half = detail::scaled_width(input_dim, 0.5);
	const auto third = detail::scaled_width(input_dim, 0.33);
	const auto three_q = detail::scaled_width(input_dim, 0.75);
	ArchitectureSpec a{ModelKind::autoencoder, input_dim, {}, input_dim};
	switch (preset) {
	case 'A': a.hidden = {code}; break;
	case 'B': a.hidden = {half, code, half}; break;
	case 'C': a.hidden = {three_q, half, third, code, third, half, three_q}; break;
	default: throw ConfigError(std::string("unknown autoencoder preset '") + preset + "'");
	}
	return a;
}

/// Accepts "classifier-B", "autoencoder-A", or an explicit
/// "classifier:115,58" / "autoencoder:29" layout.
inline ArchitectureSpec parse_architecture(std::string_view name, std::size_t input_dim = kNumFeatures)
{
	auto starts = [&](std::string_view p) { return name.substr(0, p.size()) == p; };
	if (starts("classifier-") && name.size() == 12)
		return classifier_preset(name[11], input_dim);
	if (starts("autoencoder-") && name.size() == 13)
		return autoencoder_preset(name[12], input_dim);
	const auto colon = name.find(':');
	if (colon != std::string_view::npos) {
		const auto head = name.substr(0, colon);
		ArchitectureSpec a;
		a.input_dim = input_dim;
		if (head == "classifier") {
			a.kind = ModelKind::classifier;
			a.output_dim = 1;
		} else if (head == "autoencoder") {
			a.kind = ModelKind::autoencoder;
			a.output_dim = input_dim;
		} else {
			throw ConfigError("unknown architecture '" + std::string(name) + "'");
		}
		for (auto cell : detail::split_commas(name.substr(colon + 1))) {
			if (cell.empty())
				continue;
			std::size_t w = 0;
			const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), w);
			if (r.ec != std::errc() || w == 0)
				throw ConfigError("bad layer width in '" + std::string(name) + "'");
			a.hidden.push_back(w);
		}
		return a;
	}
	throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

struct ModelParameters {
	ArchitectureSpec arch;
	std::vector<double> flat;

	bool operator==(const ModelParameters &) const = default;
};

struct OptimizerConfig {
	double learning_rate = 0.05;
	double l2_lambda = 0.0;
	std::size_t batch_size = 64;
};

inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }

inline double sigmoid(double z)
{
	if (z >= 0.0)
		return 1.0 / (1.0 + std::exp(-z));
	const double e = std::exp(z);
	return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// Glorot-uniform weights, zero biases.
inline ModelParameters init_model(const ArchitectureSpec &arch, std::uint64_t seed)
{
	ModelParameters p{arch, std::vector<double>(arch.parameter_count(), 0.0)};
	Rng rng(seed);
	const auto w = arch.widths();
	std::size_t off = 0;
	for (std::size_t l = 0; l + 1 < w.size(); ++l) {
		const double limit = std::sqrt(6.0 / static_cast<double>(w[l] + w[l + 1]));
		for (std::size_t i = 0; i < w[l] * w[l + 1]; ++i)
			p.flat[off + i] = rng.uniform(-limit, limit);
		off += w[l] * w[l + 1] + w[l + 1];
	}
	return p;
}

/// Scratch space for evaluating one architecture. Not thread-safe; give each
/// trainer its own instance.
class Network {
public:
	explicit Network(ArchitectureSpec arch) : arch_(std::move(arch)), widths_(arch_.widths())
	{
		const auto L = widths_.size() - 1;
		weight_off_.resize(L);
		bias_off_.resize(L);
		std::size_t off = 0;
		for (std::size_t l = 0; l < L; ++l) {
			weight_off_[l] = off;
			off += widths_[l] * widths_[l + 1];
			bias_off_[l] = off;
			off += widths_[l + 1];
		}
		act_.resize(L + 1);
		pre_.resize(L + 1);
		delta_.resize(L + 1);
		for (std::size_t l = 0; l <= L; ++l) {
			act_[l].assign(widths_[l], 0.0);
			pre_[l].assign(widths_[l], 0.0);
			delta_[l].assign(widths_[l], 0.0);
		}
	}

	const ArchitectureSpec &arch() const { return arch_; }

	/// Returns the head output: a probability for classifiers, the
	/// reconstruction for autoencoders. The returned span is valid until the
	/// next call.
	std::span<const double> forward(std::span<const double> flat, std::span<const double> x)
	{
		run(flat, x);
		return act_.back();
	}

	/// Classifier logit of the last forward pass.
	double last_logit() const { return pre_.back()[0]; }

	/// Mean loss over the batch plus lambda * ||weights||^2. When `grad` is
	/// non-empty the gradient with respect to `flat` is written to it.
	double loss_and_gradient(std::span<const double> flat, std::span<const Sample *const> batch, double l2_lambda,
							 std::span<double> grad)
	{
		check_flat(flat);
		if (batch.empty())
			throw EmptyPartError("loss of an empty batch");
		const bool want_grad = !grad.empty();
		if (want_grad) {
			if (grad.size() != flat.size())
				throw DimensionError("gradient buffer has wrong size");
			std::fill(grad.begin(), grad.end(), 0.0);
		}
		const double inv_n = 1.0 / static_cast<double>(batch.size());
		const std::size_t L = widths_.size() - 1;
		double total = 0.0;
		for (const Sample *s : batch) {
			run(flat, s->features);
			auto &out_delta = delta_[L];
			if (arch_.kind == ModelKind::classifier) {
				if (!s->label)
					throw ConfigError("classifier loss needs labeled samples");
				const double y = static_cast<double>(*s->label);
				const double z = pre_[L][0];
				total += softplus(z) - y * z;
				out_delta[0] = (act_[L][0] - y) * inv_n;
			} else {
				const double inv_f = 1.0 / static_cast<double>(widths_[L]);
				double se = 0.0;
				for (std::size_t j = 0; j < widths_[L]; ++j) {
					const double diff = act_[L][j] - s->features[j];
					se += diff * diff;
					out_delta[j] = 2.0 * diff * inv_f * inv_n;
				}
				total += se * inv_f;
			}
			if (want_grad)
				backpropagate(flat, grad);
		}
		double loss = total * inv_n;
		if (l2_lambda != 0.0) {
			double sq = 0.0;
			for (std::size_t l = 0; l < L; ++l) {
				const std::size_t n = widths_[l] * widths_[l + 1];
				const double *w = flat.data() + weight_off_[l];
				for (std::size_t i = 0; i < n; ++i) {
					sq += w[i] * w[i];
					if (want_grad)
						grad[weight_off_[l] + i] += 2.0 * l2_lambda * w[i];
				}
			}
			loss += l2_lambda * sq;
		}
		return loss;
	}

	/// True for coordinates of `flat` that are weights (as opposed to biases).
	std::vector<bool> weight_mask() const
	{
		std::vector<bool> mask(arch_.parameter_count(), false);
		for (std::size_t l = 0; l + 1 < widths_.size(); ++l)
			for (std::size_t i = 0; i < widths_[l] * widths_[l + 1]; ++i)
				mask[weight_off_[l] + i] = true;
		return mask;
	}

private:
	void check_flat(std::span<const double> flat) const
	{
		if (flat.size() != arch_.parameter_count())
			throw DimensionError("parameter vector has " + std::to_string(flat.size()) + " entries, architecture needs " +
								 std::to_string(arch_.parameter_count()));
	}

	void run(std::span<const double> flat, std::span<const double> x)
	{
		if (x.size() != widths_[0])
			throw DimensionError("input has " + std::to_string(x.size()) + " features, model expects " +
								 std::to_string(widths_[0]));
		std::copy(x.begin(), x.end(), act_[0].begin());
		const std::size_t L = widths_.size() - 1;
		for (std::size_t l = 0; l < L; ++l) {
			const std::size_t in = widths_[l], out = widths_[l + 1];
			const double *W = flat.data() + weight_off_[l];
			const double *b = flat.data() + bias_off_[l];
			const double *a = act_[l].data();
			double *z = pre_[l + 1].data();
			for (std::size_t j = 0; j < out; ++j) {
				const double *row = W + j * in;
				double acc = b[j];
				for (std::size_t i = 0; i < in; ++i)
					acc += row[i] * a[i];
				z[j] = acc;
			}
			double *next = act_[l + 1].data();
			if (l + 1 < L) {
				for (std::size_t j = 0; j < out; ++j)
					next[j] = elu(z[j]);
			} else if (arch_.kind == ModelKind::classifier) {
				next[0] = sigmoid(z[0]);
			} else {
				std::copy(z, z + out, next);
			}
		}
	}

	// Expects delta_[L] = dLoss/d(output pre-activation) for the last run.
	void backpropagate(std::span<const double> flat, std::span<double> grad)
	{
		const std::size_t L = widths_.size() - 1;
		for (std::size_t l = L; l-- > 0;) {
			const std::size_t in = widths_[l], out = widths_[l + 1];
			const double *W = flat.data() + weight_off_[l];
			double *gW = grad.data() + weight_off_[l];
			double *gb = grad.data() + bias_off_[l];
			const double *a = act_[l].data();
			const double *d = delta_[l + 1].data();
			for (std::size_t j = 0; j < out; ++j) {
				const double dj = d[j];
				gb[j] += dj;
				double *grow = gW + j * in;
				for (std::size_t i = 0; i < in; ++i)
					grow[i] += dj * a[i];
			}
			if (l == 0)
				break;
			double *prev = delta_[l].data();
			std::fill(prev, prev + in, 0.0);
			for (std::size_t j = 0; j < out; ++j) {
				const double dj = d[j];
				const double *row = W + j * in;
				for (std::size_t i = 0; i < in; ++i)
					prev[i] += row[i] * dj;
			}
			const double *z = pre_[l].data();
			for (std::size_t i = 0; i < in; ++i)
				prev[i] *= z[i] > 0.0 ? 1.0 : std::exp(z[i]);
		}
	}

	ArchitectureSpec arch_;
	std::vector<std::size_t> widths_;
	std::vector<std::size_t> weight_off_;
	std::vector<std::size_t> bias_off_;
	std::vector<std::vector<double>> act_;
	std::vector<std::vector<double>> pre_;
	std::vector<std::vector<double>> delta_;
};

namespace detail {

inline std::vector<const Sample *> pointers(std::span<const Sample> batch)
{
	std::vector<const Sample *> p;
	p.reserve(batch.size());
	for (const auto &s : batch)
		p.push_back(&s);
	return p;
}

} // namespace detail

/// Head outputs for every sample of the batch.
inline std::vector<std::vector<double>> forward(const ModelParameters &params, std::span<const Sample> batch)
{
	Network net(params.arch);
	std::vector<std::vector<double>> out;
	out.reserve(batch.size());
	for (const auto &s : batch) {
		const auto o = net.forward(params.flat, s.features);
		out.emplace_back(o.begin(), o.end());
	}
	return out;
}

inline double loss(const ModelParameters &params, std::span<const Sample> batch, double l2_lambda = 0.0)
{
	Network net(params.arch);
	const auto ptrs = detail::pointers(batch);
	return net.loss_and_gradient(params.flat, ptrs, l2_lambda, {});
}

inline std::vector<double> backward(const ModelParameters &params, std::span<const Sample> batch, double l2_lambda = 0.0)
{
	Network net(params.arch);
	const auto ptrs = detail::pointers(batch);
	std::vector<double> grad(params.flat.size());
	net.loss_and_gradient(params.flat, ptrs, l2_lambda, grad);
	return grad;
}

/// w <- w - lr * g. A non-finite gradient or result is reported, never
/// written.
inline ModelParameters sgd_step(const ModelParameters &params, std::span<const double> gradient, double lr)
{
	if (gradient.size() != params.flat.size())
		throw DimensionError("gradient length does not match the model");
	if (!all_finite(gradient))
		throw PoisonedUpdateError("non-finite gradient");
	ModelParameters out{params.arch, params.flat};
	for (std::size_t i = 0; i < out.flat.size(); ++i)
		out.flat[i] -= lr * gradient[i];
	if (!all_finite(out.flat))
		throw PoisonedUpdateError("SGD step overflowed");
	return out;
}

/// Mean over features of the squared reconstruction error, one per sample.
inline std::vector<double> mse_per_sample(const ModelParameters &params, std::span<const Sample> samples)
{
	if (params.arch.kind != ModelKind::autoencoder)
		throw KindError("reconstruction error needs an autoencoder");
	Network net(params.arch);
	std::vector<double> out;
	out.reserve(samples.size());
	for (const auto &s : samples) {
		const auto r = net.forward(params.flat, s.features);
		double se = 0.0;
		for (std::size_t j = 0; j < r.size(); ++j) {
			const double d = r[j] - s.features[j];
			se += d * d;
		}
		out.push_back(se / static_cast<double>(r.size()));
	}
	return out;
}

/// Predicted probabilities of the attack class.
inline std::vector<double> predict_proba(const ModelParameters &params, std::span<const Sample> samples)
{
	if (params.arch.kind != ModelKind::classifier)
		throw KindError("class probabilities need a classifier");
	Network net(params.arch);
	std::vector<double> out;
	out.reserve(samples.size());
	for (const auto &s : samples)
		out.push_back(net.forward(params.flat, s.features)[0]);
	return out;
}

/// Decision rule of the classifier head: attack iff p > 0.5.
inline int classify(double probability) { return probability > 0.5 ? kAttack : kBenign; }

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary: "FEDIDSM1", u8 kind, u32 input, u32 output, u32 #hidden, u32 widths,
// u64 d, d little-endian doubles.
// Text: "fedids-model 1" header then key lines and one value per line.

inline constexpr char kModelMagic[8] = {'F', 'E', 'D', 'I', 'D', 'S', 'M', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <class T>
void put(std::ostream &out, T v)
{
	out.write(reinterpret_cast<const char *>(&v), sizeof v);
}

template <class T>
T get(std::istream &in)
{
	T v{};
	if (!in.read(reinterpret_cast<char *>(&v), sizeof v))
		throw ParseError("truncated model checkpoint");
	return v;
}

} // namespace detail

inline void save_model_binary(const std::filesystem::path &path, const ModelParameters &m)
{
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw IoError("cannot write '" + path.string() + "'");
	out.write(kModelMagic, sizeof kModelMagic);
	detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.arch.kind));
	detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.arch.input_dim));
	detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.arch.output_dim));
	detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.arch.hidden.size()));
	for (auto w : m.arch.hidden)
		detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
	detail::put<std::uint64_t>(out, m.flat.size());
	out.write(reinterpret_cast<const char *>(m.flat.data()), static_cast<std::streamsize>(m.flat.size() * sizeof(double)));
}

inline void save_model_text(const std::filesystem::path &path, const ModelParameters &m)
{
	std::ofstream out(path);
	if (!out)
		throw IoError("cannot write '" + path.string() + "'");
	out << "fedids-model 1\n";
	out << "kind " << to_string(m.arch.kind) << '\n';
	out << "input " << m.arch.input_dim << '\n';
	out << "output " << m.arch.output_dim << '\n';
	out << "hidden";
	for (auto w : m.arch.hidden)
		out << ' ' << w;
	out << '\n';
	out << "params " << m.flat.size() << '\n';
	char buf[32];
	for (double x : m.flat) {
		const auto r = std::to_chars(buf, buf + sizeof buf, x);
		out.write(buf, r.ptr - buf);
		out << '\n';
	}
}

namespace detail {

inline ModelParameters finish_loaded(ArchitectureSpec arch, std::vector<double> flat)
{
	if (flat.size() != arch.parameter_count())
		throw SchemaError("checkpoint holds " + std::to_string(flat.size()) + " parameters, architecture needs " +
						  std::to_string(arch.parameter_count()));
	return {std::move(arch), std::move(flat)};
}

inline ModelParameters read_binary_model(std::istream &in)
{
	ArchitectureSpec arch;
	const auto kind = get<std::uint8_t>(in);
	if (kind > 1)
		throw ParseError("unknown model kind in checkpoint");
	arch.kind = static_cast<ModelKind>(kind);
	arch.input_dim = get<std::uint32_t>(in);
	arch.output_dim = get<std::uint32_t>(in);
	const auto nh = get<std::uint32_t>(in);
	for (std::uint32_t i = 0; i < nh; ++i)
		arch.hidden.push_back(get<std::uint32_t>(in));
	const auto d = get<std::uint64_t>(in);
	if (d != arch.parameter_count())
		throw SchemaError("checkpoint parameter count disagrees with its architecture");
	std::vector<double> flat(d);
	if (!in.read(reinterpret_cast<char *>(flat.data()), static_cast<std::streamsize>(d * sizeof(double))))
		throw ParseError("truncated model checkpoint");
	return finish_loaded(std::move(arch), std::move(flat));
}

inline ModelParameters read_text_model(std::istream &in)
{
	std::string line;
	if (!std::getline(in, line) || line != "fedids-model 1")
		throw ParseError("not a model checkpoint");
	ArchitectureSpec arch;
	std::size_t d = 0;
	auto expect = [&](std::string_view key) {
		if (!std::getline(in, line) || line.substr(0, key.size()) != key)
			throw ParseError("checkpoint: expected '" + std::string(key) + "' line");
		return line.substr(key.size());
	};
	const auto kind = expect("kind");
	if (kind == " classifier")
		arch.kind = ModelKind::classifier;
	else if (kind == " autoencoder")
		arch.kind = ModelKind::autoencoder;
	else
		throw ParseError("checkpoint: unknown kind");
	arch.input_dim = std::stoul(expect("input"));
	arch.output_dim = std::stoul(expect("output"));
	{
		std::istringstream ss(expect("hidden"));
		std::size_t w;
		while (ss >> w)
			arch.hidden.push_back(w);
	}
	d = std::stoul(expect("params"));
	std::vector<double> flat;
	flat.reserve(d);
	while (flat.size() < d && std::getline(in, line)) {
		const auto v = parse_double(trim(line));
		if (!v)
			throw ParseError("checkpoint: bad parameter value '" + line + "'");
		flat.push_back(*v);
	}
	if (flat.size() != d)
		throw ParseError("truncated model checkpoint");
	return finish_loaded(std::move(arch), std::move(flat));
}

} // namespace detail

/// Reads either checkpoint format, detected from the leading bytes.
inline ModelParameters load_model(const std::filesystem::path &path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open '" + path.string() + "'");
	char magic[sizeof kModelMagic] = {};
	in.read(magic, sizeof magic);
	if (in.gcount() == sizeof magic && std::memcmp(magic, kModelMagic, sizeof magic) == 0)
		return detail::read_binary_model(in);
	in.clear();
	in.seekg(0);
	return detail::read_text_model(in);
}

} // namespace fedids
