#pragma once

// Shared error types, seeded random streams and small numeric helpers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <random>
#include <vector>

namespace fedids {

/// Base of every error raised by the library. `kind()` is the short
/// machine-readable tag the CLI puts in its error record.
class Error : public std::runtime_error {
public:
	Error(std::string kind, const std::string &message)
		: std::runtime_error(message), kind_(std::move(kind)) {}

	const std::string &kind() const noexcept { return kind_; }

private:
	std::string kind_;
};

struct SchemaError : Error {
	explicit SchemaError(const std::string &m) : Error("schema_error", m) {}
};
struct ParseError : Error {
	explicit ParseError(const std::string &m) : Error("parse_error", m) {}
};
struct ConfigError : Error {
	explicit ConfigError(const std::string &m) : Error("config_error", m) {}
};
struct EmptyPartError : Error {
	explicit EmptyPartError(const std::string &m) : Error("empty_part", m) {}
};
struct MissingClassError : Error {
	explicit MissingClassError(const std::string &m) : Error("missing_class", m) {}
};
struct DimensionError : Error {
	explicit DimensionError(const std::string &m) : Error("dimension_mismatch", m) {}
};
struct KindError : Error {
	explicit KindError(const std::string &m) : Error("kind_error", m) {}
};
struct IoError : Error {
	explicit IoError(const std::string &m) : Error("io_error", m) {}
};

/// Raised when a model update contains NaN or infinity. Carries the id of
/// the client that produced it when known.
class PoisonedUpdateError : public Error {
public:
	explicit PoisonedUpdateError(const std::string &m, std::optional<std::size_t> client = std::nullopt)
		: Error("poisoned_update", client ? m + " (client " + std::to_string(*client) + ")" : m),
		  client_(client) {}

	std::optional<std::size_t> client() const noexcept { return client_; }

private:
	std::optional<std::size_t> client_;
};

// ---------------------------------------------------------------------------
// Seeds

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
	x += 0x9e3779b97f4a7c15ULL;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
	return x ^ (x >> 31);
}

/// Stream roles mixed into derived seeds so that e.g. the shuffling stream of
/// client 3 never collides with the rebalancing stream of device 3.
enum class Role : std::uint64_t {
	fleet = 1,
	device = 2,
	balance = 3,
	client = 4,
	init = 5,
	server = 6,
	malicious = 7,
	poison = 8,
	grid = 9,
	cell = 10,
};

/// Hash a master seed together with a list of coordinates into an
/// independent, reproducible child seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) noexcept
{
	std::uint64_t h = splitmix64(master ^ 0x6a09e667f3bcc908ULL);
	for (auto p : parts)
		h = splitmix64(h ^ splitmix64(p + 0x3c6ef372fe94f82bULL));
	return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, Role role, std::initializer_list<std::uint64_t> parts = {}) noexcept
{
	std::uint64_t h = derive_seed(master, {static_cast<std::uint64_t>(role)});
	for (auto p : parts)
		h = splitmix64(h ^ splitmix64(p + 0xa54ff53a5f1d36f1ULL));
	return h;
}

// ---------------------------------------------------------------------------
// Random numbers
//
// The engine is std::mt19937_64 (its output sequence is fixed by the
// standard). The conversions to doubles and bounded integers are done here
// rather than with <random> distributions, whose outputs differ between
// standard libraries.

class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }

	/// Uniform in [0, 1).
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [0, n). Rejection sampling, no modulo bias.
	std::size_t below(std::size_t n)
	{
		if (n == 0)
			throw ConfigError("Rng::below called with n = 0");
		const std::uint64_t bound = static_cast<std::uint64_t>(n);
		const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
		std::uint64_t x;
		do {
			x = engine_();
		} while (x >= limit);
		return static_cast<std::size_t>(x % bound);
	}

	/// Standard normal (Box-Muller, one value per call).
	double normal()
	{
		double u1 = uniform();
		while (u1 <= 0.0)
			u1 = uniform();
		const double u2 = uniform();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
	}

	template <class T>
	void shuffle(std::vector<T> &v)
	{
		for (std::size_t i = v.size(); i > 1; --i)
			std::swap(v[i - 1], v[below(i)]);
	}

private:
	std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Numeric helpers

inline bool all_finite(std::span<const double> v) noexcept
{
	for (double x : v)
		if (!std::isfinite(x))
			return false;
	return true;
}

/// Mean of the values computed as a running update m += (x - m) / k. Exact
/// for repeated identical values.
inline double running_mean(std::span<const double> values) noexcept
{
	double m = 0.0;
	std::size_t k = 0;
	for (double x : values)
		m += (x - m) / static_cast<double>(++k);
	return m;
}

} // namespace fedids
