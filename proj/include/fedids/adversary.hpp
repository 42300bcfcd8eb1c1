#pragma once

// Byzantine client behaviours: label flipping on the training data, and the
// gradient-factor and model-cancelling model poisonings.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "dataset.hpp"
#include "neuralnet.hpp"

namespace fedids {

enum class AttackKind { none, flip_benign, flip_attack, flip_all, gradient_factor, model_cancel };

inline std::string_view to_string(AttackKind k)
{
	switch (k) {
	case AttackKind::none: return "none";
	case AttackKind::flip_benign: return "flip_benign";
	case AttackKind::flip_attack: return "flip_attack";
	case AttackKind::flip_all: return "flip_all";
	case AttackKind::gradient_factor: return "gradient_factor";
	case AttackKind::model_cancel: return "model_cancel";
	}
	return "none";
}

inline AttackKind parse_attack_kind(std::string_view s)
{
	for (auto k : {AttackKind::none, AttackKind::flip_benign, AttackKind::flip_attack, AttackKind::flip_all,
				   AttackKind::gradient_factor, AttackKind::model_cancel})
		if (to_string(k) == s)
			return k;
	throw ConfigError("unknown attack kind '" + std::string(s) + "'");
}

inline bool is_label_flip(AttackKind k)
{
	return k == AttackKind::flip_benign || k == AttackKind::flip_attack || k == AttackKind::flip_all;
}

struct AttackSpec {
	AttackKind kind = AttackKind::none;
	double p_poison = 1.0;
	/// Number of malicious clients.
	std::size_t f = 0;
	bool colluding = true;
};

inline void validate(const AttackSpec &a, std::size_t K)
{
	if (a.kind == AttackKind::none)
		return;
	if (a.p_poison < 0.0 || a.p_poison > 1.0)
		throw ConfigError("p_poison must lie in [0, 1]");
	if (a.f >= K)
		throw ConfigError("f = " + std::to_string(a.f) + " malicious clients needs K > f, got K = " + std::to_string(K));
	if (a.kind == AttackKind::model_cancel && !a.colluding)
		throw ConfigError("model cancelling requires colluding attackers");
}

/// Flip floor(p * #targeted) labels chosen uniformly among the targeted ones.
/// flip_benign targets 0-labels, flip_attack 1-labels, flip_all every label.
inline std::vector<Sample> flip_labels(std::vector<Sample> train, AttackKind kind, double p_poison, Rng &rng)
{
	if (!is_label_flip(kind))
		throw ConfigError("flip_labels called with non label-flipping attack '" + std::string(to_string(kind)) + "'");
	if (p_poison < 0.0 || p_poison > 1.0)
		throw ConfigError("p_poison must lie in [0, 1]");
	std::vector<std::size_t> targets;
	for (std::size_t i = 0; i < train.size(); ++i) {
		if (!train[i].label)
			throw ConfigError("label flipping needs labeled (supervised) samples");
		const int y = *train[i].label;
		if (kind == AttackKind::flip_all || (kind == AttackKind::flip_benign && y == kBenign) ||
			(kind == AttackKind::flip_attack && y == kAttack))
			targets.push_back(i);
	}
	const auto n = static_cast<std::size_t>(std::floor(p_poison * static_cast<double>(targets.size()) + 1e-9));
	for (std::size_t i = 0; i < n; ++i)
		std::swap(targets[i], targets[i + rng.below(targets.size() - i)]);
	for (std::size_t i = 0; i < n; ++i) {
		auto &label = *train[targets[i]].label;
		label = label == kBenign ? kAttack : kBenign;
	}
	return train;
}

namespace detail {

inline void check_counts(std::size_t K, std::size_t f)
{
	if (f == 0)
		throw ConfigError("attack coefficient is undefined for f = 0");
	if (f >= K)
		throw ConfigError("attack coefficient needs f < K");
}

} // namespace detail

/// Factor making the mean update factor of all K clients equal to -1:
/// (K - f + alpha f) / K = -1, i.e. alpha = (f - 2K) / f.
inline double alpha_gradient(std::size_t K, std::size_t f)
{
	detail::check_counts(K, f);
	return (static_cast<double>(f) - 2.0 * static_cast<double>(K)) / static_cast<double>(f);
}

/// Factor cancelling the honest weight: K - f + alpha f = 0, i.e.
/// alpha = (f - K) / f.
inline double alpha_cancel(std::size_t K, std::size_t f)
{
	detail::check_counts(K, f);
	return (static_cast<double>(f) - static_cast<double>(K)) / static_cast<double>(f);
}

inline std::vector<double> apply_gradient_factor(std::span<const double> gradient, double alpha)
{
	std::vector<double> out(gradient.begin(), gradient.end());
	for (auto &g : out)
		g *= alpha;
	return out;
}

/// The cancelling client's submission: alpha times the round's global model.
inline ModelParameters cancel_update(const ModelParameters &global, double alpha)
{
	ModelParameters out = global;
	for (auto &w : out.flat)
		w *= alpha;
	return out;
}

/// Choose f distinct malicious client ids out of K, uniformly. Sorted.
inline std::vector<std::size_t> select_malicious(std::size_t K, std::size_t f, Rng &rng)
{
	if (f > K)
		throw ConfigError("cannot select more malicious clients than clients");
	std::vector<std::size_t> ids(K);
	for (std::size_t i = 0; i < K; ++i)
		ids[i] = i;
	for (std::size_t i = 0; i < f; ++i)
		std::swap(ids[i], ids[i + rng.below(K - i)]);
	ids.resize(f);
	std::sort(ids.begin(), ids.end());
	return ids;
}

} // namespace fedids
