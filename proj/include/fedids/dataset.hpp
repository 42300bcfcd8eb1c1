#pragma once

// Per-device traffic streams: CSV / manifest ingestion, a synthetic non-IID
// fleet generator, chronological splitting and class rebalancing.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace fedids {

/// Number of traffic statistics per record in the N-BaIoT layout.
inline constexpr std::size_t kNumFeatures = 115;

inline constexpr int kBenign = 0;
inline constexpr int kAttack = 1;

struct Sample {
	std::vector<double> features;
	std::optional<int> label;
	std::int64_t seq_index = 0;

	bool operator==(const Sample &) const = default;
};

enum class Mode { supervised, unsupervised };

inline std::string_view to_string(Mode m) { return m == Mode::supervised ? "supervised" : "unsupervised"; }

inline Mode parse_mode(std::string_view s)
{
	if (s == "supervised")
		return Mode::supervised;
	if (s == "unsupervised")
		return Mode::unsupervised;
	throw ConfigError("unknown mode '" + std::string(s) + "'");
}

/// One device's data after splitting. `threshold_sel` is only populated in
/// unsupervised mode. `unused` is the gap between train and test and is never
/// read by any training or evaluation path.
struct DevicePartition {
	std::string device_id;
	std::vector<Sample> train;
	std::vector<Sample> threshold_sel;
	std::vector<Sample> unused;
	std::vector<Sample> test;
};

struct BalanceSpec {
	double benign_fraction = 0.5;
	std::size_t samples_per_device = 100000;
};

/// A device's raw capture. Each segment is an independently ordered stream
/// (one capture file in the N-BaIoT layout, the whole stream for synthetic
/// devices).
struct DeviceStream {
	std::string device_id;
	std::vector<std::vector<Sample>> segments;

	std::size_t size() const
	{
		std::size_t n = 0;
		for (const auto &s : segments)
			n += s.size();
		return n;
	}
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvOptions {
	std::size_t feature_count = kNumFeatures;
	bool has_header = false;
	/// Expect a trailing label column in {0, 1}.
	bool has_label = true;
	/// Label assigned to every row when the file carries no label column.
	std::optional<int> fixed_label;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
	while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
		s.remove_prefix(1);
	while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
		s.remove_suffix(1);
	return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line)
{
	std::vector<std::string_view> cells;
	std::size_t start = 0;
	while (true) {
		const auto pos = line.find(',', start);
		if (pos == std::string_view::npos) {
			cells.push_back(trim(line.substr(start)));
			break;
		}
		cells.push_back(trim(line.substr(start, pos - start)));
		start = pos + 1;
	}
	return cells;
}

inline std::optional<double> parse_double(std::string_view cell)
{
	if (cell.empty())
		return std::nullopt;
	if (cell.front() == '+')
		cell.remove_prefix(1);
	double v = 0.0;
	const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
	if (ec != std::errc() || ptr != cell.data() + cell.size())
		return std::nullopt;
	return v;
}

} // namespace detail

/// Read one device CSV. Samples come back in file order with seq_index equal
/// to the 0-based data row number.
inline std::vector<Sample> load_device_csv(const std::filesystem::path &path, const CsvOptions &opts = {})
{
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot open '" + path.string() + "'");

	const std::size_t arity = opts.feature_count + (opts.has_label ? 1 : 0);
	std::vector<Sample> out;
	std::string line;
	std::size_t line_no = 0;
	bool header_pending = opts.has_header;
	while (std::getline(in, line)) {
		++line_no;
		if (detail::trim(line).empty())
			continue;
		if (header_pending) {
			header_pending = false;
			continue;
		}
		const auto row = static_cast<std::int64_t>(out.size());
		const auto cells = detail::split_commas(line);
		if (cells.size() != arity)
			throw SchemaError(path.string() + ": row " + std::to_string(row) + " (line " + std::to_string(line_no) +
							  ") has " + std::to_string(cells.size()) + " columns, expected " + std::to_string(arity));
		Sample s;
		s.seq_index = row;
		s.features.reserve(opts.feature_count);
		for (std::size_t j = 0; j < opts.feature_count; ++j) {
			const auto v = detail::parse_double(cells[j]);
			if (!v)
				throw ParseError(path.string() + ": row " + std::to_string(row) + " column " + std::to_string(j) +
								 ": non-numeric cell '" + std::string(cells[j]) + "'");
			s.features.push_back(*v);
		}
		if (opts.has_label) {
			const auto &cell = cells.back();
			if (cell == "0")
				s.label = kBenign;
			else if (cell == "1")
				s.label = kAttack;
			else
				throw ParseError(path.string() + ": row " + std::to_string(row) + ": label '" + std::string(cell) +
								 "' is not 0 or 1");
		} else {
			s.label = opts.fixed_label;
		}
		out.push_back(std::move(s));
	}
	return out;
}

struct ManifestEntry {
	std::string device_id;
	std::filesystem::path path;
	std::string role; // "benign", "labeled" or an attack name
};

/// Parse a manifest of `device_id, path, class` lines. Relative paths are
/// resolved against the manifest's directory. A leading header line whose
/// first cell is `device_id` is skipped; `#` starts a comment line.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path &manifest)
{
	std::ifstream in(manifest);
	if (!in)
		throw IoError("cannot open manifest '" + manifest.string() + "'");
	std::vector<ManifestEntry> entries;
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const auto t = detail::trim(line);
		if (t.empty() || t.front() == '#')
			continue;
		const auto cells = detail::split_commas(t);
		if (cells.size() != 3)
			throw SchemaError(manifest.string() + ": line " + std::to_string(line_no) +
							  " must have 3 columns (device_id, path, class)");
		if (entries.empty() && cells[0] == "device_id")
			continue;
		std::filesystem::path p(cells[1]);
		if (p.is_relative())
			p = manifest.parent_path() / p;
		entries.push_back({std::string(cells[0]), p, std::string(cells[2])});
	}
	return entries;
}

/// Load every file listed in a manifest. Files carry features only and the
/// label comes from the file's class (benign -> 0, anything else -> 1), except
/// class `labeled`, whose files end with their own label column. Each file
/// becomes one segment of its device, with seq_index offset so indices are
/// unique within the device.
inline std::vector<DeviceStream> load_manifest(const std::filesystem::path &manifest, bool has_header = false,
											   std::size_t feature_count = kNumFeatures)
{
	const auto entries = read_manifest(manifest);
	std::vector<DeviceStream> devices;
	std::map<std::string, std::size_t> index;
	for (const auto &e : entries) {
		auto [it, inserted] = index.try_emplace(e.device_id, devices.size());
		if (inserted)
			devices.push_back({e.device_id, {}});
		auto &dev = devices[it->second];
		CsvOptions opts;
		opts.feature_count = feature_count;
		opts.has_header = has_header;
		opts.has_label = e.role == "labeled";
		if (!opts.has_label)
			opts.fixed_label = e.role == "benign" ? kBenign : kAttack;
		auto rows = load_device_csv(e.path, opts);
		const auto offset = static_cast<std::int64_t>(dev.size());
		for (auto &s : rows)
			s.seq_index += offset;
		dev.segments.push_back(std::move(rows));
	}
	return devices;
}

// ---------------------------------------------------------------------------
// Splitting

/// Part fractions in units of 1/10000 so boundaries are exact integers.
struct SplitPlan {
	std::size_t train = 0;
	std::size_t threshold_sel = 0;
	std::size_t unused = 0;
	std::size_t test = 0;
};

inline constexpr std::size_t kFractionUnit = 10000;

/// Part sizes for a stream of n samples: earlier parts floored, remainder to
/// test.
inline SplitPlan split_plan(std::size_t n, Mode mode)
{
	SplitPlan p;
	if (mode == Mode::supervised) {
		p.train = n * 7900 / kFractionUnit;
		p.unused = n * 100 / kFractionUnit;
	} else {
		p.train = n * 3950 / kFractionUnit;
		p.threshold_sel = n * 3950 / kFractionUnit;
		p.unused = n * 100 / kFractionUnit;
	}
	p.test = n - p.train - p.threshold_sel - p.unused;
	return p;
}

namespace detail {

inline void require_ordered(std::span<const Sample> samples)
{
	for (std::size_t i = 1; i < samples.size(); ++i)
		if (samples[i].seq_index <= samples[i - 1].seq_index)
			throw ConfigError("samples are not in seq_index order at position " + std::to_string(i));
}

inline void sort_by_seq(std::vector<Sample> &v)
{
	std::stable_sort(v.begin(), v.end(),
					 [](const Sample &a, const Sample &b) { return a.seq_index < b.seq_index; });
}

} // namespace detail

/// Split one ordered stream. Supervised: train / unused / test over the whole
/// stream. Unsupervised: the benign stream is split into train / threshold
/// selection / unused / benign-test, and every attack sample goes to test.
inline DevicePartition chronological_split(std::span<const Sample> samples, Mode mode, std::string device_id = {})
{
	if (samples.empty())
		throw EmptyPartError("cannot split an empty stream");
	detail::require_ordered(samples);

	DevicePartition part;
	part.device_id = std::move(device_id);

	if (mode == Mode::supervised) {
		const auto plan = split_plan(samples.size(), mode);
		if (plan.train == 0 || plan.unused == 0 || plan.test == 0)
			throw EmptyPartError("stream of " + std::to_string(samples.size()) +
								 " samples is too short for a train/unused/test split");
		auto it = samples.begin();
		part.train.assign(it, it + plan.train);
		it += plan.train;
		part.unused.assign(it, it + plan.unused);
		it += plan.unused;
		part.test.assign(it, samples.end());
		return part;
	}

	std::vector<Sample> benign;
	std::vector<Sample> attack;
	for (const auto &s : samples) {
		if (!s.label)
			throw ConfigError("unsupervised split needs labels to separate benign from attack traffic");
		(*s.label == kBenign ? benign : attack).push_back(s);
	}
	const auto plan = split_plan(benign.size(), mode);
	if (plan.train == 0 || plan.threshold_sel == 0 || plan.unused == 0 || plan.test == 0)
		throw EmptyPartError("benign stream of " + std::to_string(benign.size()) +
							 " samples is too short for a train/threshold/unused/test split");
	auto it = benign.begin();
	part.train.assign(it, it + plan.train);
	it += plan.train;
	part.threshold_sel.assign(it, it + plan.threshold_sel);
	it += plan.threshold_sel;
	part.unused.assign(it, it + plan.unused);
	it += plan.unused;
	part.test.assign(it, benign.end());
	part.test.insert(part.test.end(), attack.begin(), attack.end());
	detail::sort_by_seq(part.test);
	return part;
}

/// Split every segment of a device independently and concatenate the parts.
inline DevicePartition split_device(const DeviceStream &stream, Mode mode)
{
	DevicePartition out;
	out.device_id = stream.device_id;
	if (mode == Mode::supervised || stream.segments.size() == 1) {
		for (const auto &seg : stream.segments) {
			auto p = chronological_split(seg, mode, stream.device_id);
			auto append = [](std::vector<Sample> &dst, std::vector<Sample> &src) {
				dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
			};
			append(out.train, p.train);
			append(out.threshold_sel, p.threshold_sel);
			append(out.unused, p.unused);
			append(out.test, p.test);
		}
		return out;
	}
	// Unsupervised with per-class files: the benign files form the stream to
	// split, attack files go to test whole.
	std::vector<Sample> all;
	for (const auto &seg : stream.segments)
		all.insert(all.end(), seg.begin(), seg.end());
	return chronological_split(all, mode, stream.device_id);
}

// ---------------------------------------------------------------------------
// Rebalancing

namespace detail {

/// Draw exactly `target` samples from `pool`: keep every original and add
/// uniform duplicates when upsampling, keep a uniform subset when
/// downsampling.
inline std::vector<Sample> resize_class(const std::vector<Sample> &pool, std::size_t target, Rng &rng)
{
	std::vector<Sample> out;
	out.reserve(target);
	if (target >= pool.size()) {
		out = pool;
		for (std::size_t i = pool.size(); i < target; ++i)
			out.push_back(pool[rng.below(pool.size())]);
		return out;
	}
	std::vector<std::size_t> idx(pool.size());
	for (std::size_t i = 0; i < idx.size(); ++i)
		idx[i] = i;
	for (std::size_t i = 0; i < target; ++i)
		std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
	idx.resize(target);
	std::sort(idx.begin(), idx.end());
	for (auto i : idx)
		out.push_back(pool[i]);
	return out;
}

inline std::size_t benign_count(double benign_fraction, std::size_t part_size)
{
	const auto n = static_cast<std::size_t>(std::floor(benign_fraction * static_cast<double>(part_size) + 1e-9));
	return std::min(n, part_size);
}

inline std::vector<Sample> rebalance_part(const std::vector<Sample> &part, std::size_t n_benign,
										  std::size_t n_attack, Rng &rng, const std::string &what)
{
	std::vector<Sample> benign;
	std::vector<Sample> attack;
	for (const auto &s : part) {
		if (!s.label)
			throw ConfigError("rebalancing needs labeled samples (" + what + ")");
		(*s.label == kBenign ? benign : attack).push_back(s);
	}
	if (n_benign > 0 && benign.empty())
		throw MissingClassError(what + ": no benign samples available, " + std::to_string(n_benign) + " required");
	if (n_attack > 0 && attack.empty())
		throw MissingClassError(what + ": no attack samples available, " + std::to_string(n_attack) + " required");
	auto out = resize_class(benign, n_benign, rng);
	auto a = resize_class(attack, n_attack, rng);
	out.insert(out.end(), a.begin(), a.end());
	sort_by_seq(out);
	return out;
}

} // namespace detail

/// Bring every part of a split device to fixed per-class counts. Total size is
/// `samples_per_device`, divided between parts with the split fractions.
/// Supervised parts and the unsupervised test part follow `benign_fraction`;
/// unsupervised train / threshold parts are benign only. The unused part is
/// never read and is only resized, whatever its class mix.
inline DevicePartition rebalance(const DevicePartition &partition, const BalanceSpec &spec, Mode mode,
								 std::uint64_t seed)
{
	if (!(spec.benign_fraction > 0.0 && spec.benign_fraction < 1.0))
		throw ConfigError("benign_fraction must lie in (0, 1)");
	if (spec.samples_per_device == 0)
		throw ConfigError("samples_per_device must be positive");

	const auto plan = split_plan(spec.samples_per_device, mode);
	DevicePartition out;
	out.device_id = partition.device_id;
	const auto &id = partition.device_id;

	auto mixed = [&](const std::vector<Sample> &part, std::size_t size, std::uint64_t tag, const char *name) {
		Rng rng(derive_seed(seed, Role::balance, {tag}));
		const auto nb = detail::benign_count(spec.benign_fraction, size);
		return detail::rebalance_part(part, nb, size - nb, rng, "device '" + id + "' " + name);
	};
	auto benign_only = [&](const std::vector<Sample> &part, std::size_t size, std::uint64_t tag, const char *name) {
		Rng rng(derive_seed(seed, Role::balance, {tag}));
		return detail::rebalance_part(part, size, 0, rng, "device '" + id + "' " + name);
	};

	if (mode == Mode::supervised) {
		out.train = mixed(partition.train, plan.train, 0, "train");
	} else {
		out.train = benign_only(partition.train, plan.train, 0, "train");
		out.threshold_sel = benign_only(partition.threshold_sel, plan.threshold_sel, 1, "threshold");
	}
	if (!partition.unused.empty()) {
		Rng rng(derive_seed(seed, Role::balance, {2}));
		out.unused = detail::resize_class(partition.unused, plan.unused, rng);
		detail::sort_by_seq(out.unused);
	}
	out.test = mixed(partition.test, plan.test, 3, "test");
	return out;
}

// ---------------------------------------------------------------------------
// Synthetic fleet

/// Gaussian stand-in for an N-BaIoT fleet. Benign traffic of every device
/// lies near a shared low-rank subspace around a device-specific mean; each
/// attack family is an offset cluster, and every device only observes a
/// subset of the families.
struct SyntheticSpec {
	std::size_t n_devices = 9;
	std::size_t samples_per_device = 1000;
	std::size_t feature_dim = kNumFeatures;
	std::uint64_t seed = 0;
	/// Probability that a raw record is attack traffic.
	double attack_fraction = 0.5;
	std::size_t latent_dim = 6;
	std::size_t device_dims = 4;
	double device_spread = 0.05;
	double latent_scale = 0.3;
	std::size_t attack_families = 4;
	std::size_t families_per_device = 2;
	double attack_shift = 8.0;
	double attack_jitter = 0.3;
	double noise = 0.05;
};

inline std::vector<DeviceStream> generate_synthetic_fleet(const SyntheticSpec &spec)
{
	if (spec.n_devices < 2)
		throw ConfigError("a synthetic fleet needs at least 2 devices");
	if (spec.feature_dim < 1)
		throw ConfigError("feature_dim must be at least 1");
	if (spec.attack_families == 0 || spec.families_per_device == 0 ||
		spec.families_per_device > spec.attack_families)
		throw ConfigError("families_per_device must lie in [1, attack_families]");
	if (spec.attack_fraction < 0.0 || spec.attack_fraction > 1.0)
		throw ConfigError("attack_fraction must lie in [0, 1]");

	const std::size_t F = spec.feature_dim;
	Rng fleet(derive_seed(spec.seed, Role::fleet));

	auto gaussian_matrix = [&](std::size_t cols, double scale) {
		std::vector<double> m(F * cols);
		for (auto &x : m)
			x = scale * fleet.normal();
		return m;
	};
	const auto loading = gaussian_matrix(spec.latent_dim, spec.latent_scale / std::sqrt(double(std::max<std::size_t>(spec.latent_dim, 1))));
	const auto device_basis = gaussian_matrix(spec.device_dims, spec.device_spread / std::sqrt(double(std::max<std::size_t>(spec.device_dims, 1))));
	std::vector<double> base(F);
	for (auto &x : base)
		x = fleet.uniform(0.0, 1.0);
	std::vector<std::vector<double>> shifts(spec.attack_families, std::vector<double>(F));
	for (auto &shift : shifts) {
		double norm = 0.0;
		for (auto &x : shift) {
			x = fleet.normal();
			norm += x * x;
		}
		norm = std::sqrt(norm);
		for (auto &x : shift)
			x *= spec.attack_shift / norm;
	}

	std::vector<DeviceStream> devices;
	devices.reserve(spec.n_devices);
	for (std::size_t k = 0; k < spec.n_devices; ++k) {
		Rng rng(derive_seed(spec.seed, Role::device, {k}));
		std::vector<double> mean = base;
		for (std::size_t c = 0; c < spec.device_dims; ++c) {
			const double u = rng.normal();
			for (std::size_t j = 0; j < F; ++j)
				mean[j] += device_basis[j * spec.device_dims + c] * u;
		}
		std::vector<std::size_t> families(spec.attack_families);
		for (std::size_t a = 0; a < families.size(); ++a)
			families[a] = a;
		rng.shuffle(families);
		families.resize(spec.families_per_device);
		std::vector<std::vector<double>> attack_means;
		for (auto a : families) {
			std::vector<double> m(F);
			for (std::size_t j = 0; j < F; ++j)
				m[j] = mean[j] + shifts[a][j] + spec.attack_jitter * rng.normal() / std::sqrt(double(F));
			attack_means.push_back(std::move(m));
		}

		std::vector<Sample> stream;
		stream.reserve(spec.samples_per_device);
		std::vector<double> z(spec.latent_dim);
		for (std::size_t i = 0; i < spec.samples_per_device; ++i) {
			const bool is_attack = rng.uniform() < spec.attack_fraction;
			const auto &centre = is_attack ? attack_means[rng.below(attack_means.size())] : mean;
			for (auto &v : z)
				v = rng.normal();
			Sample s;
			s.seq_index = static_cast<std::int64_t>(i);
			s.label = is_attack ? kAttack : kBenign;
			s.features.resize(F);
			for (std::size_t j = 0; j < F; ++j) {
				double x = centre[j] + spec.noise * rng.normal();
				for (std::size_t c = 0; c < spec.latent_dim; ++c)
					x += loading[j * spec.latent_dim + c] * z[c];
				s.features[j] = x;
			}
			stream.push_back(std::move(s));
		}
		devices.push_back({"device-" + std::to_string(k), {std::move(stream)}});
	}
	return devices;
}

/// Write a device stream as `f0..fN,label` CSV rows (17 significant digits).
inline void write_device_csv(const std::filesystem::path &path, std::span<const Sample> samples, bool header = true)
{
	std::ofstream out(path);
	if (!out)
		throw IoError("cannot write '" + path.string() + "'");
	char buf[32];
	if (header && !samples.empty()) {
		for (std::size_t j = 0; j < samples.front().features.size(); ++j)
			out << 'f' << j << ',';
		out << "label\n";
	}
	for (const auto &s : samples) {
		for (double x : s.features) {
			const auto r = std::to_chars(buf, buf + sizeof buf, x);
			out.write(buf, r.ptr - buf);
			out << ',';
		}
		out << (s.label ? *s.label : 0) << '\n';
	}
}

} // namespace fedids
