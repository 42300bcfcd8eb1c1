#pragma once

// Declarative experiment configuration (JSON) and the shipped profiles.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adversary.hpp"
#include "aggregation.hpp"
#include "dataset.hpp"
#include "federation.hpp"

namespace fedids {

using json = nlohmann::json;

enum class Approach { naive, federated, centralized };

inline std::string_view to_string(Approach a)
{
	switch (a) {
	case Approach::naive: return "naive";
	case Approach::federated: return "federated";
	case Approach::centralized: return "centralized";
	}
	return "federated";
}

inline Approach parse_approach(std::string_view s)
{
	if (s == "naive")
		return Approach::naive;
	if (s == "federated")
		return Approach::federated;
	if (s == "centralized")
		return Approach::centralized;
	throw ConfigError("unknown approach '" + std::string(s) + "'");
}

struct DataSource {
	enum class Kind { synthetic, manifest } kind = Kind::synthetic;
	SyntheticSpec synthetic;
	std::filesystem::path manifest;
	bool header = false;
	std::size_t feature_count = kNumFeatures;
};

struct GridSpec {
	std::vector<std::string> architectures;
	std::vector<double> l2;
	/// Training length per grid point (epochs, and rounds for Multi-epoch).
	std::size_t epochs = 1;
	std::size_t rounds = 1;
};

struct ExperimentConfig {
	std::string name = "experiment";
	DataSource data;
	Mode mode = Mode::supervised;
	BalanceSpec balance;
	Approach approach = Approach::federated;
	FederationConfig federation;
	AttackSpec attack;
	/// Used when no grid is configured.
	std::string architecture = "classifier-B";
	double l2 = 0.0;
	std::optional<GridSpec> grid;
	/// Batch size of the naive and centralized baselines.
	std::size_t baseline_batch_size = 64;
	/// Held-out device indices; empty means every device in turn.
	std::vector<std::size_t> folds;
	std::size_t repetitions = 1;
	std::uint64_t seed = 0;
	/// Evaluate metrics every this many aggregations (0 = final model only).
	std::size_t eval_every = 0;
	StdKind threshold_std = StdKind::population;
	/// Overrides the computed model size in the cost report.
	std::optional<double> model_size_kb;
};

namespace detail {

template <class T>
T value_or(const json &j, const char *key, T fallback)
{
	if (!j.contains(key) || j.at(key).is_null())
		return fallback;
	try {
		return j.at(key).get<T>();
	} catch (const json::exception &e) {
		throw ConfigError(std::string("config key '") + key + "': " + e.what());
	}
}

inline std::vector<std::size_t> read_folds(const json &j)
{
	if (!j.contains("folds") || j["folds"].is_null())
		return {};
	const auto &f = j["folds"];
	if (f.is_string()) {
		if (f.get<std::string>() == "all")
			return {};
		throw ConfigError("folds must be \"all\" or a list of device indices");
	}
	if (!f.is_array())
		throw ConfigError("folds must be \"all\" or a list of device indices");
	return f.get<std::vector<std::size_t>>();
}

} // namespace detail

inline SyntheticSpec parse_synthetic(const json &j)
{
	SyntheticSpec s;
	s.n_devices = detail::value_or(j, "n_devices", s.n_devices);
	s.samples_per_device = detail::value_or(j, "samples_per_device", s.samples_per_device);
	s.feature_dim = detail::value_or(j, "feature_dim", s.feature_dim);
	s.seed = detail::value_or(j, "seed", s.seed);
	s.attack_fraction = detail::value_or(j, "attack_fraction", s.attack_fraction);
	s.latent_dim = detail::value_or(j, "latent_dim", s.latent_dim);
	s.device_dims = detail::value_or(j, "device_dims", s.device_dims);
	s.device_spread = detail::value_or(j, "device_spread", s.device_spread);
	s.latent_scale = detail::value_or(j, "latent_scale", s.latent_scale);
	s.attack_families = detail::value_or(j, "attack_families", s.attack_families);
	s.families_per_device = detail::value_or(j, "families_per_device", s.families_per_device);
	s.attack_shift = detail::value_or(j, "attack_shift", s.attack_shift);
	s.attack_jitter = detail::value_or(j, "attack_jitter", s.attack_jitter);
	s.noise = detail::value_or(j, "noise", s.noise);
	return s;
}

inline json to_json(const SyntheticSpec &s)
{
	return {{"n_devices", s.n_devices},
			{"samples_per_device", s.samples_per_device},
			{"feature_dim", s.feature_dim},
			{"seed", s.seed},
			{"attack_fraction", s.attack_fraction},
			{"latent_dim", s.latent_dim},
			{"device_dims", s.device_dims},
			{"device_spread", s.device_spread},
			{"latent_scale", s.latent_scale},
			{"attack_families", s.attack_families},
			{"families_per_device", s.families_per_device},
			{"attack_shift", s.attack_shift},
			{"attack_jitter", s.attack_jitter},
			{"noise", s.noise}};
}

inline AggregationSpec parse_aggregation(const json &j)
{
	AggregationSpec a;
	a.rule = parse_aggregation_rule(detail::value_or<std::string>(j, "rule", "AVG"));
	a.trim_c = detail::value_or<std::size_t>(j, "c", 0);
	a.resample_s = detail::value_or<std::size_t>(j, "s", 0);
	return a;
}

inline json to_json(const AggregationSpec &a)
{
	json j{{"rule", a.rule == AggregationRule::avg ? "AVG" : a.rule == AggregationRule::med ? "MED" : "TM"}};
	if (a.rule == AggregationRule::tm)
		j["c"] = a.trim_c;
	if (a.resample_s > 0)
		j["s"] = a.resample_s;
	return j;
}

inline ExperimentConfig parse_config(const json &j)
{
	if (!j.is_object())
		throw ConfigError("experiment config must be a JSON object");
	ExperimentConfig c;
	c.name = detail::value_or<std::string>(j, "name", c.name);
	c.mode = parse_mode(detail::value_or<std::string>(j, "mode", "supervised"));
	c.approach = parse_approach(detail::value_or<std::string>(j, "approach", "federated"));

	const json data = j.value("data", json::object());
	const auto source = detail::value_or<std::string>(data, "source", "synthetic");
	if (source == "synthetic") {
		c.data.kind = DataSource::Kind::synthetic;
		c.data.synthetic = parse_synthetic(data.value("synthetic", json::object()));
	} else if (source == "manifest") {
		c.data.kind = DataSource::Kind::manifest;
		c.data.manifest = detail::value_or<std::string>(data, "manifest", "");
		if (c.data.manifest.empty())
			throw ConfigError("data.manifest is required for a manifest source");
	} else {
		throw ConfigError("unknown data source '" + source + "'");
	}
	c.data.header = detail::value_or(data, "header", false);
	c.data.feature_count = detail::value_or(data, "feature_count", c.data.feature_count);

	const json bal = j.value("balance", json::object());
	c.balance.benign_fraction = detail::value_or(bal, "benign_fraction", c.balance.benign_fraction);
	c.balance.samples_per_device = detail::value_or(bal, "samples_per_device", c.balance.samples_per_device);

	const json fed = j.value("federation", json::object());
	auto &f = c.federation;
	f.algorithm = parse_algorithm(detail::value_or<std::string>(fed, "algorithm", "mini_batch"));
	f.epochs = detail::value_or(fed, "epochs", f.epochs);
	f.rounds = detail::value_or(fed, "rounds", f.rounds);
	f.optimizer.batch_size = detail::value_or(fed, "batch_size", f.optimizer.batch_size);
	f.optimizer.learning_rate = detail::value_or(fed, "learning_rate", f.optimizer.learning_rate);
	f.lr_decay = detail::value_or(fed, "lr_decay", f.lr_decay);
	f.dropout = detail::value_or(fed, "dropout", f.dropout);
	f.shuffle = detail::value_or(fed, "shuffle", f.shuffle);
	f.aggregation = parse_aggregation(j.value("aggregation", json::object()));

	const json atk = j.value("attack", json::object());
	c.attack.kind = parse_attack_kind(detail::value_or<std::string>(atk, "kind", "none"));
	c.attack.f = detail::value_or<std::size_t>(atk, "f", 0);
	c.attack.p_poison = detail::value_or(atk, "p_poison", 1.0);
	c.attack.colluding = detail::value_or(atk, "colluding", true);

	const json model = j.value("model", json::object());
	c.architecture = detail::value_or(model, "architecture", c.architecture);
	c.l2 = detail::value_or(model, "l2", c.l2);
	if (j.contains("grid") && !j["grid"].is_null()) {
		const auto &g = j["grid"];
		GridSpec gs;
		gs.architectures = detail::value_or(g, "architectures", std::vector<std::string>{});
		gs.l2 = detail::value_or(g, "l2", std::vector<double>{0.0});
		gs.epochs = detail::value_or(g, "epochs", gs.epochs);
		gs.rounds = detail::value_or(g, "rounds", gs.rounds);
		if (gs.architectures.empty() || gs.l2.empty())
			throw ConfigError("grid needs at least one architecture and one l2 value");
		c.grid = gs;
	}

	c.baseline_batch_size = detail::value_or(j, "baseline_batch_size", c.baseline_batch_size);
	c.folds = detail::read_folds(j);
	c.repetitions = detail::value_or(j, "repetitions", c.repetitions);
	c.seed = detail::value_or(j, "seed", c.seed);
	c.eval_every = detail::value_or(j, "eval_every", c.eval_every);
	const auto std_kind = detail::value_or<std::string>(j, "threshold_std", "population");
	if (std_kind == "population")
		c.threshold_std = StdKind::population;
	else if (std_kind == "sample")
		c.threshold_std = StdKind::sample;
	else
		throw ConfigError("threshold_std must be \"population\" or \"sample\"");
	if (j.contains("model_size_kb") && !j["model_size_kb"].is_null())
		c.model_size_kb = j["model_size_kb"].get<double>();

	if (c.repetitions == 0)
		throw ConfigError("repetitions must be at least 1");
	if (c.approach != Approach::federated && c.attack.kind != AttackKind::none)
		throw ConfigError("attacks are only defined for the federated approach");
	if (c.mode == Mode::unsupervised && is_label_flip(c.attack.kind))
		throw ConfigError("label flipping needs the supervised mode");
	if (c.attack.kind != AttackKind::none && c.attack.f == 0)
		throw ConfigError("an attack needs f >= 1 malicious clients");
	return c;
}

inline json to_json(const ExperimentConfig &c)
{
	json data;
	if (c.data.kind == DataSource::Kind::synthetic) {
		data = {{"source", "synthetic"}, {"synthetic", to_json(c.data.synthetic)}};
	} else {
		data = {{"source", "manifest"}, {"manifest", c.data.manifest.string()}};
	}
	data["header"] = c.data.header;
	data["feature_count"] = c.data.feature_count;
	const auto &f = c.federation;
	json j{{"name", c.name},
		   {"mode", to_string(c.mode)},
		   {"approach", to_string(c.approach)},
		   {"data", data},
		   {"balance", {{"benign_fraction", c.balance.benign_fraction}, {"samples_per_device", c.balance.samples_per_device}}},
		   {"federation",
			{{"algorithm", to_string(f.algorithm)},
			 {"epochs", f.epochs},
			 {"rounds", f.rounds},
			 {"batch_size", f.optimizer.batch_size},
			 {"learning_rate", f.optimizer.learning_rate},
			 {"lr_decay", f.lr_decay},
			 {"dropout", f.dropout},
			 {"shuffle", f.shuffle}}},
		   {"aggregation", to_json(f.aggregation)},
		   {"attack",
			{{"kind", to_string(c.attack.kind)},
			 {"f", c.attack.f},
			 {"p_poison", c.attack.p_poison},
			 {"colluding", c.attack.colluding}}},
		   {"model", {{"architecture", c.architecture}, {"l2", c.l2}}},
		   {"baseline_batch_size", c.baseline_batch_size},
		   {"repetitions", c.repetitions},
		   {"seed", c.seed},
		   {"eval_every", c.eval_every},
		   {"threshold_std", c.threshold_std == StdKind::population ? "population" : "sample"}};
	if (c.folds.empty())
		j["folds"] = "all";
	else
		j["folds"] = c.folds;
	if (c.grid)
		j["grid"] = {{"architectures", c.grid->architectures},
					 {"l2", c.grid->l2},
					 {"epochs", c.grid->epochs},
					 {"rounds", c.grid->rounds}};
	if (c.model_size_kb)
		j["model_size_kb"] = *c.model_size_kb;
	return j;
}

// ---------------------------------------------------------------------------
// Profiles

namespace detail {

inline json supervised_profile(const std::string &name, double benign_fraction, Algorithm algo)
{
	json j{{"name", name},
		   {"mode", "supervised"},
		   {"approach", "federated"},
		   {"data", {{"source", "synthetic"}, {"synthetic", {{"n_devices", 9}, {"samples_per_device", 20000}, {"seed", 1}}}}},
		   {"balance", {{"benign_fraction", benign_fraction}, {"samples_per_device", 100000}}},
		   {"federation",
			{{"algorithm", to_string(algo)},
			 {"epochs", 4},
			 {"rounds", 30},
			 {"batch_size", algo == Algorithm::mini_batch ? 8 : 64},
			 {"learning_rate", 0.05},
			 {"lr_decay", 0.9}}},
		   {"aggregation", {{"rule", "AVG"}}},
		   {"attack", {{"kind", "none"}, {"f", 0}}},
		   {"grid",
			{{"architectures", {"classifier-A", "classifier-B", "classifier-C", "classifier-D"}},
			 {"l2", {0.0, 1e-5, 1e-4}},
			 {"epochs", 1},
			 {"rounds", 3}}},
		   {"baseline_batch_size", 64},
		   {"folds", "all"},
		   {"repetitions", 5},
		   {"seed", 2021},
		   {"model_size_kb", 94}};
	return j;
}

inline json unsupervised_profile(const std::string &name, Algorithm algo)
{
	json j = supervised_profile(name, 0.5, algo);
	j["mode"] = "unsupervised";
	j["balance"]["samples_per_device"] = 10000;
	j["data"]["synthetic"]["samples_per_device"] = 10000;
	j["federation"]["epochs"] = 120;
	j["federation"]["learning_rate"] = 0.01;
	j["grid"]["architectures"] = {"autoencoder-A", "autoencoder-B", "autoencoder-C"};
	j["grid"]["epochs"] = 5;
	j["model_size_kb"] = 27;
	return j;
}

/// Desk-scale fleet: 8 clients + 1 held-out device, 5,000 samples each.
inline json desk_data()
{
	return {{"source", "synthetic"}, {"synthetic", {{"n_devices", 9}, {"samples_per_device", 5000}, {"seed", 7}}}};
}

} // namespace detail

inline std::map<std::string, json> builtin_profiles()
{
	using detail::supervised_profile;
	using detail::unsupervised_profile;
	std::map<std::string, json> p;
	p["supervised-7.87"] = supervised_profile("supervised-7.87", 0.0787, Algorithm::mini_batch);
	p["supervised-50"] = supervised_profile("supervised-50", 0.50, Algorithm::mini_batch);
	p["supervised-95"] = supervised_profile("supervised-95", 0.95, Algorithm::mini_batch);
	p["supervised-7.87-multi-epoch"] = supervised_profile("supervised-7.87-multi-epoch", 0.0787, Algorithm::multi_epoch);
	p["supervised-50-multi-epoch"] = supervised_profile("supervised-50-multi-epoch", 0.50, Algorithm::multi_epoch);
	p["supervised-95-multi-epoch"] = supervised_profile("supervised-95-multi-epoch", 0.95, Algorithm::multi_epoch);
	p["unsupervised"] = unsupervised_profile("unsupervised", Algorithm::mini_batch);
	p["unsupervised-multi-epoch"] = unsupervised_profile("unsupervised-multi-epoch", Algorithm::multi_epoch);
	for (const char *base : {"supervised-50", "unsupervised"}) {
		for (const char *approach : {"naive", "centralized"}) {
			auto j = p[base];
			const std::string name = std::string(base) + "-" + approach;
			j["name"] = name;
			j["approach"] = approach;
			p[name] = j;
		}
	}
	{
		auto j = supervised_profile("adversarial-95", 0.95, Algorithm::mini_batch);
		j["federation"]["batch_size"] = 64;
		p["adversarial-95"] = j;
	}

	// Desk-scale variants: fixed architecture, no grid search.
	{
		auto j = supervised_profile("desk-supervised", 0.5, Algorithm::mini_batch);
		j["data"] = detail::desk_data();
		j["balance"]["samples_per_device"] = 5000;
		j["grid"] = nullptr;
		j["model"] = {{"architecture", "classifier-B"}, {"l2", 0.0}};
		j["folds"] = {8};
		j.erase("model_size_kb");
		p["desk-supervised"] = j;
	}
	{
		auto j = p["desk-supervised"];
		j["name"] = "desk-adversarial";
		j["balance"]["benign_fraction"] = 0.95;
		j["federation"]["batch_size"] = 64;
		j["federation"]["epochs"] = 8;
		j["federation"]["learning_rate"] = 0.3;
		p["desk-adversarial"] = j;
	}
	{
		auto j = unsupervised_profile("desk-unsupervised", Algorithm::mini_batch);
		j["data"] = detail::desk_data();
		j["balance"]["samples_per_device"] = 5000;
		j["federation"]["epochs"] = 10;
		j["federation"]["learning_rate"] = 0.1;
		j["grid"] = nullptr;
		j["model"] = {{"architecture", "autoencoder-A"}, {"l2", 0.0}};
		j["folds"] = {8};
		j.erase("model_size_kb");
		p["desk-unsupervised"] = j;
	}
	return p;
}

/// A profile name or a path to a JSON config file.
inline ExperimentConfig load_config(const std::string &name_or_path)
{
	const auto profiles = builtin_profiles();
	if (auto it = profiles.find(name_or_path); it != profiles.end())
		return parse_config(it->second);
	std::ifstream in(name_or_path);
	if (!in)
		throw ConfigError("'" + name_or_path + "' is neither a profile nor a readable config file");
	json j;
	try {
		j = json::parse(in);
	} catch (const json::parse_error &e) {
		throw ParseError(name_or_path + ": " + e.what());
	}
	// A config may extend a profile and override individual keys.
	if (j.contains("profile")) {
		const auto base = j["profile"].get<std::string>();
		auto it = profiles.find(base);
		if (it == profiles.end())
			throw ConfigError("unknown profile '" + base + "'");
		json merged = it->second;
		j.erase("profile");
		merged.merge_patch(j);
		return parse_config(merged);
	}
	return parse_config(j);
}

} // namespace fedids
