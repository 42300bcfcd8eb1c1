#pragma once

// Experiment runner: builds partitions for every (held-out fold, repetition)
// cell, trains with the configured approach, evaluates on known devices and
// the held-out device, and gathers everything into a result bundle.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adversary.hpp"
#include "aggregation.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "federation.hpp"
#include "metrics.hpp"
#include "neuralnet.hpp"
#include "preprocess.hpp"

namespace fedids {

// ---------------------------------------------------------------------------
// Costs

struct CostEstimate {
	std::size_t transmissions = 0;
	std::size_t local_steps = 0;
	double model_bytes = 0.0;

	double communication_bytes() const { return model_bytes * static_cast<double>(transmissions); }
};

/// Closed forms per client: Mini-batch sends E * n/B models and takes as many
/// steps; Multi-epoch sends T models and takes T * E * n/B steps.
inline CostEstimate cost_closed_form(Algorithm algo, std::size_t n_k, std::size_t batch, std::size_t epochs,
									 std::size_t rounds, double model_bytes)
{
	const auto steps = batches_per_epoch(n_k, batch);
	CostEstimate c;
	c.model_bytes = model_bytes;
	if (algo == Algorithm::mini_batch) {
		c.transmissions = epochs * steps;
		c.local_steps = epochs * steps;
	} else {
		c.transmissions = rounds;
		c.local_steps = rounds * epochs * steps;
	}
	return c;
}

/// Size of a binary checkpoint: header plus 8 bytes per parameter.
inline double model_size_bytes(const ArchitectureSpec &arch)
{
	const double header = 8 + 1 + 4 + 4 + 4 + 4.0 * static_cast<double>(arch.hidden.size()) + 8;
	return header + 8.0 * static_cast<double>(arch.parameter_count());
}

/// Decimal units, 4 significant digits: "2.82 MB", "3.713 GB".
inline std::string format_bytes(double bytes)
{
	const char *units[] = {"B", "kB", "MB", "GB", "TB"};
	std::size_t u = 0;
	while (bytes >= 1000.0 && u + 1 < std::size(units)) {
		bytes /= 1000.0;
		++u;
	}
	char buf[48];
	std::snprintf(buf, sizeof buf, "%.4g %s", bytes, units[u]);
	return buf;
}

/// Cost of a configuration from its closed forms. Train size follows the
/// rebalanced per-device sample count.
inline CostEstimate config_cost(const ExperimentConfig &cfg, const ArchitectureSpec &arch)
{
	const auto n_k = split_plan(cfg.balance.samples_per_device, cfg.mode).train;
	const double bytes = cfg.model_size_kb ? *cfg.model_size_kb * 1000.0 : model_size_bytes(arch);
	const auto &f = cfg.federation;
	if (cfg.approach != Approach::federated) {
		auto c = cost_closed_form(Algorithm::mini_batch, n_k, cfg.baseline_batch_size, f.epochs, 1, bytes);
		c.transmissions = 0;
		return c;
	}
	return cost_closed_form(f.algorithm, n_k, f.optimizer.batch_size, f.epochs, f.rounds, bytes);
}

// ---------------------------------------------------------------------------
// Results

struct RunRow {
	std::size_t fold = 0;
	std::size_t repetition = 0;
	std::uint64_t seed = 0;
	std::string held_out;
	std::string status = "ok";
	std::string error;
	std::string attack = "none";
	std::string aggregation = "AVG";
	std::size_t f = 0;
	std::vector<std::size_t> malicious;
	std::string hyperparams;
	Metrics known;
	std::optional<Metrics> new_device;
	std::vector<Metrics> per_device;
	std::optional<double> threshold;
	std::size_t transmissions = 0;
	std::size_t local_steps = 0;
	std::size_t train_size = 0;
	double model_bytes = 0.0;
	double wall_seconds = 0.0;

	bool ok() const { return status == "ok"; }
};

struct CurvePoint {
	std::size_t fold = 0;
	std::size_t repetition = 0;
	std::size_t aggregation = 0;
	std::size_t round = 0;
	double epoch = 0.0;
	double lr = 0.0;
	std::optional<Metrics> known;
	std::optional<Metrics> new_device;
	std::optional<double> threshold;
};

struct SweepRow {
	std::string attack;
	std::string aggregation;
	std::size_t f = 0;
	std::size_t runs = 0;
	std::size_t failed = 0;
	double mean_f1 = 0.0;
	double min_f1 = 0.0;
	double max_f1 = 0.0;
	double mean_accuracy = 0.0;
	double mean_tpr = 0.0;
	double mean_tnr = 0.0;
};

struct ResultBundle {
	json config = json::object();
	std::string label;
	std::vector<RunRow> rows;
	std::vector<CurvePoint> curves;
	std::vector<SweepRow> sweep;
	std::optional<CostEstimate> cost;
	std::string algorithm;
	double benign_fraction = 0.0;
	std::string mode = "supervised";
};

struct MetricSummary {
	std::size_t runs = 0;
	double accuracy = 0.0, tpr = 0.0, tnr = 0.0, f1 = 0.0;
	double min_f1 = 0.0, max_f1 = 0.0;
};

/// Means over the successful rows. `new_device` selects the scope.
inline MetricSummary summarize(const std::vector<RunRow> &rows, bool new_device)
{
	MetricSummary s;
	for (const auto &r : rows) {
		if (!r.ok())
			continue;
		const Metrics *m = new_device ? (r.new_device ? &*r.new_device : nullptr) : &r.known;
		if (!m)
			continue;
		if (s.runs == 0) {
			s.min_f1 = m->f1;
			s.max_f1 = m->f1;
		}
		++s.runs;
		const double k = static_cast<double>(s.runs);
		s.accuracy += (m->accuracy - s.accuracy) / k;
		s.tpr += (m->tpr - s.tpr) / k;
		s.tnr += (m->tnr - s.tnr) / k;
		s.f1 += (m->f1 - s.f1) / k;
		s.min_f1 = std::min(s.min_f1, m->f1);
		s.max_f1 = std::max(s.max_f1, m->f1);
	}
	return s;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Metrics &m)
{
	return {{"accuracy", m.accuracy}, {"tpr", m.tpr}, {"tnr", m.tnr}, {"f1", m.f1},
			{"tp", m.counts.tp}, {"tn", m.counts.tn}, {"fp", m.counts.fp}, {"fn", m.counts.fn}};
}

inline Metrics metrics_from_json(const json &j)
{
	Metrics m;
	m.accuracy = j.at("accuracy").get<double>();
	m.tpr = j.at("tpr").get<double>();
	m.tnr = j.at("tnr").get<double>();
	m.f1 = j.at("f1").get<double>();
	m.counts.tp = j.value("tp", std::size_t{0});
	m.counts.tn = j.value("tn", std::size_t{0});
	m.counts.fp = j.value("fp", std::size_t{0});
	m.counts.fn = j.value("fn", std::size_t{0});
	return m;
}

namespace detail {

template <class T, class F>
json optional_json(const std::optional<T> &v, F &&f)
{
	return v ? f(*v) : json(nullptr);
}

} // namespace detail

inline json to_json(const ResultBundle &b)
{
	json rows = json::array();
	for (const auto &r : b.rows) {
		json per = json::array();
		for (const auto &m : r.per_device)
			per.push_back(to_json(m));
		rows.push_back({{"fold", r.fold},
						{"repetition", r.repetition},
						{"seed", r.seed},
						{"held_out", r.held_out},
						{"status", r.status},
						{"error", r.error},
						{"attack", r.attack},
						{"aggregation", r.aggregation},
						{"f", r.f},
						{"malicious", r.malicious},
						{"hyperparams", r.hyperparams},
						{"known", to_json(r.known)},
						{"new_device", detail::optional_json(r.new_device, [](const Metrics &m) { return to_json(m); })},
						{"per_device", per},
						{"threshold", detail::optional_json(r.threshold, [](double t) { return json(t); })},
						{"transmissions", r.transmissions},
						{"local_steps", r.local_steps},
						{"train_size", r.train_size},
						{"model_bytes", r.model_bytes}});
	}
	json curves = json::array();
	for (const auto &c : b.curves)
		curves.push_back({{"fold", c.fold},
						  {"repetition", c.repetition},
						  {"aggregation", c.aggregation},
						  {"round", c.round},
						  {"epoch", c.epoch},
						  {"lr", c.lr},
						  {"known", detail::optional_json(c.known, [](const Metrics &m) { return to_json(m); })},
						  {"new_device", detail::optional_json(c.new_device, [](const Metrics &m) { return to_json(m); })},
						  {"threshold", detail::optional_json(c.threshold, [](double t) { return json(t); })}});
	json sweep = json::array();
	for (const auto &s : b.sweep)
		sweep.push_back({{"attack", s.attack},
						 {"aggregation", s.aggregation},
						 {"f", s.f},
						 {"runs", s.runs},
						 {"failed", s.failed},
						 {"mean_f1", s.mean_f1},
						 {"min_f1", s.min_f1},
						 {"max_f1", s.max_f1},
						 {"mean_accuracy", s.mean_accuracy},
						 {"mean_tpr", s.mean_tpr},
						 {"mean_tnr", s.mean_tnr}});
	json mean = json::object();
	for (bool nd : {false, true}) {
		const auto s = summarize(b.rows, nd);
		mean[nd ? "new_device" : "known"] = {{"runs", s.runs}, {"accuracy", s.accuracy}, {"tpr", s.tpr},
											 {"tnr", s.tnr}, {"f1", s.f1}, {"min_f1", s.min_f1}, {"max_f1", s.max_f1}};
	}
	json cost = nullptr;
	if (b.cost)
		cost = {{"transmissions", b.cost->transmissions},
				{"local_steps", b.cost->local_steps},
				{"model_bytes", b.cost->model_bytes},
				{"communication_bytes", b.cost->communication_bytes()}};
	return {{"label", b.label},  {"mode", b.mode},     {"algorithm", b.algorithm},
			{"benign_fraction", b.benign_fraction}, {"config", b.config}, {"rows", rows},
			{"mean", mean},      {"curves", curves},   {"sweep", sweep},
			{"cost", cost}};
}

inline ResultBundle bundle_from_json(const json &j)
{
	ResultBundle b;
	try {
		b.label = j.value("label", "");
		b.mode = j.value("mode", "supervised");
		b.algorithm = j.value("algorithm", "");
		b.benign_fraction = j.value("benign_fraction", 0.0);
		b.config = j.value("config", json::object());
		for (const auto &r : j.value("rows", json::array())) {
			RunRow row;
			row.fold = r.value("fold", std::size_t{0});
			row.repetition = r.value("repetition", std::size_t{0});
			row.seed = r.value("seed", std::uint64_t{0});
			row.held_out = r.value("held_out", "");
			row.status = r.value("status", "ok");
			row.error = r.value("error", "");
			row.attack = r.value("attack", "none");
			row.aggregation = r.value("aggregation", "AVG");
			row.f = r.value("f", std::size_t{0});
			row.malicious = r.value("malicious", std::vector<std::size_t>{});
			row.hyperparams = r.value("hyperparams", "");
			row.known = metrics_from_json(r.at("known"));
			if (r.contains("new_device") && !r["new_device"].is_null())
				row.new_device = metrics_from_json(r["new_device"]);
			for (const auto &m : r.value("per_device", json::array()))
				row.per_device.push_back(metrics_from_json(m));
			if (r.contains("threshold") && !r["threshold"].is_null())
				row.threshold = r["threshold"].get<double>();
			row.transmissions = r.value("transmissions", std::size_t{0});
			row.local_steps = r.value("local_steps", std::size_t{0});
			row.train_size = r.value("train_size", std::size_t{0});
			row.model_bytes = r.value("model_bytes", 0.0);
			b.rows.push_back(std::move(row));
		}
		for (const auto &c : j.value("curves", json::array())) {
			CurvePoint p;
			p.fold = c.value("fold", std::size_t{0});
			p.repetition = c.value("repetition", std::size_t{0});
			p.aggregation = c.value("aggregation", std::size_t{0});
			p.round = c.value("round", std::size_t{0});
			p.epoch = c.value("epoch", 0.0);
			p.lr = c.value("lr", 0.0);
			if (c.contains("known") && !c["known"].is_null())
				p.known = metrics_from_json(c["known"]);
			if (c.contains("new_device") && !c["new_device"].is_null())
				p.new_device = metrics_from_json(c["new_device"]);
			if (c.contains("threshold") && !c["threshold"].is_null())
				p.threshold = c["threshold"].get<double>();
			b.curves.push_back(std::move(p));
		}
		for (const auto &s : j.value("sweep", json::array())) {
			SweepRow r;
			r.attack = s.value("attack", "");
			r.aggregation = s.value("aggregation", "");
			r.f = s.value("f", std::size_t{0});
			r.runs = s.value("runs", std::size_t{0});
			r.failed = s.value("failed", std::size_t{0});
			r.mean_f1 = s.value("mean_f1", 0.0);
			r.min_f1 = s.value("min_f1", 0.0);
			r.max_f1 = s.value("max_f1", 0.0);
			r.mean_accuracy = s.value("mean_accuracy", 0.0);
			r.mean_tpr = s.value("mean_tpr", 0.0);
			r.mean_tnr = s.value("mean_tnr", 0.0);
			b.sweep.push_back(r);
		}
		if (j.contains("cost") && !j["cost"].is_null()) {
			CostEstimate c;
			c.transmissions = j["cost"].value("transmissions", std::size_t{0});
			c.local_steps = j["cost"].value("local_steps", std::size_t{0});
			c.model_bytes = j["cost"].value("model_bytes", 0.0);
			b.cost = c;
		}
	} catch (const json::exception &e) {
		throw ParseError(std::string("malformed result bundle: ") + e.what());
	}
	return b;
}

/// Wall-clock seconds per row. Kept out of the bundle so that bundle files
/// depend only on the configuration and seed.
inline json timings_json(const ResultBundle &b)
{
	json rows = json::array();
	double total = 0.0;
	for (const auto &r : b.rows) {
		rows.push_back({{"fold", r.fold},
						{"repetition", r.repetition},
						{"attack", r.attack},
						{"aggregation", r.aggregation},
						{"f", r.f},
						{"wall_seconds", r.wall_seconds},
						{"transmissions", r.transmissions},
						{"local_steps", r.local_steps}});
		total += r.wall_seconds;
	}
	return {{"label", b.label}, {"total_seconds", total}, {"rows", rows}};
}

inline void write_bundle(const std::filesystem::path &path, const ResultBundle &b)
{
	std::ofstream out(path);
	if (!out)
		throw IoError("cannot write '" + path.string() + "'");
	out << to_json(b).dump(1) << '\n';
}

inline ResultBundle read_bundle(const std::filesystem::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot open '" + path.string() + "'");
	try {
		return bundle_from_json(json::parse(in));
	} catch (const json::parse_error &e) {
		throw ParseError(path.string() + ": " + e.what());
	}
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
	/// When set, per-cell JSON-lines round logs go to `<dir>/rounds/`.
	std::optional<std::filesystem::path> log_dir;
};

inline std::vector<DeviceStream> load_fleet(const ExperimentConfig &cfg)
{
	if (cfg.data.kind == DataSource::Kind::synthetic)
		return generate_synthetic_fleet(cfg.data.synthetic);
	if (!std::filesystem::exists(cfg.data.manifest))
		throw ConfigError("data source '" + cfg.data.manifest.string() + "' does not exist");
	return load_manifest(cfg.data.manifest, cfg.data.header, cfg.data.feature_count);
}

namespace detail {

inline std::vector<HyperParams> build_grid(const ExperimentConfig &cfg, std::size_t input_dim)
{
	std::vector<HyperParams> grid;
	if (!cfg.grid) {
		grid.push_back({parse_architecture(cfg.architecture, input_dim), cfg.l2});
		return grid;
	}
	for (const auto &a : cfg.grid->architectures)
		for (double l2 : cfg.grid->l2)
			grid.push_back({parse_architecture(a, input_dim), l2});
	return grid;
}

inline FederationConfig grid_config(const ExperimentConfig &cfg, FederationConfig base)
{
	if (cfg.grid) {
		base.epochs = cfg.grid->epochs;
		base.rounds = cfg.grid->rounds;
	}
	return base;
}

/// Pick hyper-parameters for one group of clients (the whole federation, a
/// single naive client, or the centralized pool).
inline HyperParams choose(const ExperimentConfig &cfg, const std::vector<HyperParams> &grid,
						  std::span<const Client> clients, const FederationConfig &fed, std::uint64_t seed)
{
	if (grid.size() == 1)
		return grid.front();
	const auto r = collaborative_grid_search(clients, grid, grid_config(cfg, fed), seed);
	return grid[r.chosen];
}

inline FederationConfig baseline_config(const ExperimentConfig &cfg)
{
	FederationConfig f = cfg.federation;
	f.algorithm = Algorithm::mini_batch;
	f.optimizer.batch_size = cfg.baseline_batch_size;
	f.aggregation = {};
	f.dropout = 0.0;
	return f;
}

inline Metrics mean_metrics(const std::vector<Metrics> &ms)
{
	Metrics out;
	double k = 0.0;
	for (const auto &m : ms) {
		k += 1.0;
		out.accuracy += (m.accuracy - out.accuracy) / k;
		out.tpr += (m.tpr - out.tpr) / k;
		out.tnr += (m.tnr - out.tnr) / k;
		out.f1 += (m.f1 - out.f1) / k;
		out.counts += m.counts;
	}
	return out;
}

inline std::vector<double> pooled_mse(const ModelParameters &model, std::span<const Client> clients)
{
	std::vector<double> all;
	for (const auto &c : clients) {
		const auto e = mse_per_sample(model, c.threshold_sel);
		all.insert(all.end(), e.begin(), e.end());
	}
	return all;
}

inline double federated_threshold(const ModelParameters &model, std::span<const Client> clients, StdKind kind)
{
	std::vector<double> locals;
	for (const auto &c : clients)
		locals.push_back(local_threshold(model, c.threshold_sel, kind));
	return global_threshold(locals);
}

inline json metrics_or_null(const std::optional<Metrics> &m) { return m ? to_json(*m) : json(nullptr); }

struct Cell {
	std::size_t fold;
	std::size_t repetition;
	std::uint64_t seed;
	std::vector<DevicePartition> clients;
	DevicePartition held_out;
};

class CellRunner {
public:
	CellRunner(const ExperimentConfig &cfg, const RunOptions &opts) : cfg_(cfg), opts_(opts) {}

	RunRow run(const Cell &cell, std::vector<CurvePoint> &curves)
	{
		RunRow row;
		row.fold = cell.fold;
		row.repetition = cell.repetition;
		row.seed = cell.seed;
		row.held_out = cell.held_out.device_id;
		row.attack = std::string(to_string(cfg_.attack.kind));
		row.aggregation = cfg_.federation.aggregation.name();
		row.f = cfg_.attack.kind == AttackKind::none ? 0 : cfg_.attack.f;
		row.train_size = cell.clients.empty() ? 0 : cell.clients.front().train.size();
		const auto start = std::chrono::steady_clock::now();
		try {
			switch (cfg_.approach) {
			case Approach::federated: run_federated(cell, row, curves); break;
			case Approach::naive: run_naive(cell, row); break;
			case Approach::centralized: run_centralized(cell, row); break;
			}
		} catch (const PoisonedUpdateError &e) {
			row.status = "poisoned";
			row.error = e.what();
		}
		row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
		return row;
	}

private:
	std::size_t input_dim(const Cell &cell) const { return cell.clients.front().train.front().features.size(); }

	void run_federated(const Cell &cell, RunRow &row, std::vector<CurvePoint> &curves)
	{
		const std::size_t K = cell.clients.size();
		validate(cfg_.attack, K);

		std::vector<ScalingBounds> local;
		for (const auto &p : cell.clients)
			local.push_back(local_min_max(p.train));
		const auto bounds = merge_bounds(local);

		std::vector<std::size_t> malicious;
		if (cfg_.attack.kind != AttackKind::none) {
			Rng rng(derive_seed(cell.seed, Role::malicious));
			malicious = select_malicious(K, cfg_.attack.f, rng);
		}
		row.malicious = malicious;
		double alpha = 1.0;
		if (cfg_.attack.kind == AttackKind::gradient_factor)
			alpha = alpha_gradient(K, cfg_.attack.f);
		else if (cfg_.attack.kind == AttackKind::model_cancel)
			alpha = alpha_cancel(K, cfg_.attack.f);

		std::vector<Client> clients(K);
		for (std::size_t k = 0; k < K; ++k) {
			auto &c = clients[k];
			const auto scaled = scale_partition(cell.clients[k], bounds);
			c.id = k;
			c.train = scaled.train;
			c.threshold_sel = scaled.threshold_sel;
			c.test = scaled.test;
			c.seed = derive_seed(cell.seed, Role::client, {k});
			if (std::binary_search(malicious.begin(), malicious.end(), k)) {
				if (is_label_flip(cfg_.attack.kind)) {
					Rng rng(derive_seed(cell.seed, Role::poison, {k}));
					c.train = flip_labels(std::move(c.train), cfg_.attack.kind, cfg_.attack.p_poison, rng);
				} else {
					c.attack = cfg_.attack.kind;
					c.alpha = alpha;
				}
			}
		}
		const auto new_test = scale_all(cell.held_out.test, bounds);

		FederationConfig fed = cfg_.federation;
		fed.seed = cell.seed;
		const auto grid = build_grid(cfg_, input_dim(cell));
		const auto hp = choose(cfg_, grid, clients, fed, derive_seed(cell.seed, Role::grid));
		row.hyperparams = hp.label();
		fed.optimizer.l2_lambda = hp.l2;
		const auto initial = init_model(hp.arch, derive_seed(cell.seed, Role::init));

		std::vector<std::vector<Sample>> known_tests;
		for (const auto &c : clients)
			known_tests.push_back(c.test);

		std::ofstream log;
		if (opts_.log_dir) {
			std::filesystem::create_directories(*opts_.log_dir / "rounds");
			log.open(*opts_.log_dir / "rounds" /
					 ("fold" + std::to_string(cell.fold) + "_rep" + std::to_string(cell.repetition) + ".jsonl"));
		}
		const bool unsupervised = hp.arch.kind == ModelKind::autoencoder;
		std::size_t total_aggregations = fed.algorithm == Algorithm::mini_batch
											 ? fed.epochs * batches_per_epoch(clients.front().train.size(), fed.optimizer.batch_size)
											 : fed.rounds;
		RoundObserver observer;
		if (log.is_open() || cfg_.eval_every > 0) {
			observer = [&](const RoundRecord &r, const ModelParameters &global) {
				const bool eval = cfg_.eval_every > 0 &&
								  (r.aggregation % cfg_.eval_every == 0 || r.aggregation == total_aggregations);
				CurvePoint p{cell.fold, cell.repetition, r.aggregation, r.round, r.epoch, r.lr, {}, {}, {}};
				if (eval) {
					Detector d{global, std::nullopt};
					if (unsupervised)
						d.threshold = p.threshold = federated_threshold(global, clients, cfg_.threshold_std);
					const auto ev = evaluate(d, known_tests, new_test);
					p.known = ev.known;
					p.new_device = ev.new_device;
					curves.push_back(p);
				}
				if (log.is_open()) {
					json losses = json::array();
					for (const auto &l : r.client_loss)
						losses.push_back(l ? json(*l) : json(nullptr));
					json rec{{"aggregation", r.aggregation}, {"round", r.round},     {"epoch", r.epoch},
							 {"lr", r.lr},                   {"client_loss", losses}, {"known", metrics_or_null(p.known)},
							 {"new_device", metrics_or_null(p.new_device)},
							 {"threshold", p.threshold ? json(*p.threshold) : json(nullptr)}};
					log << rec.dump() << '\n';
				}
			};
		}

		const auto result = run_federation(clients, initial, fed, observer);
		row.transmissions = *std::max_element(result.transmissions.begin(), result.transmissions.end());
		row.local_steps = *std::max_element(result.local_steps.begin(), result.local_steps.end());
		row.model_bytes = model_size_bytes(hp.arch);

		Detector detector{result.model, std::nullopt};
		if (unsupervised)
			detector.threshold = row.threshold = federated_threshold(result.model, clients, cfg_.threshold_std);
		const auto ev = evaluate(detector, known_tests, new_test);
		row.known = ev.known;
		row.new_device = ev.new_device;
		row.per_device = ev.per_device;
	}

	void run_naive(const Cell &cell, RunRow &row)
	{
		const auto base = baseline_config(cfg_);
		const auto grid = build_grid(cfg_, input_dim(cell));
		std::vector<Metrics> known, fresh;
		std::vector<double> thresholds;
		for (std::size_t k = 0; k < cell.clients.size(); ++k) {
			const auto bounds = local_min_max(cell.clients[k].train);
			const auto scaled = scale_partition(cell.clients[k], bounds);
			Client c;
			c.id = k;
			c.train = scaled.train;
			c.threshold_sel = scaled.threshold_sel;
			c.test = scaled.test;
			c.seed = derive_seed(cell.seed, Role::client, {k});
			const std::vector<Client> solo{c};
			const auto hp = choose(cfg_, grid, solo, base, derive_seed(cell.seed, Role::grid, {k}));
			if (k == 0)
				row.hyperparams = hp.label();
			OptimizerConfig opt = base.optimizer;
			opt.l2_lambda = hp.l2;
			const auto model = train_local(init_model(hp.arch, derive_seed(cell.seed, Role::init, {k})), c.train,
										   base.epochs, opt, c.seed, base.shuffle);
			Detector d{model, std::nullopt};
			if (hp.arch.kind == ModelKind::autoencoder) {
				d.threshold = local_threshold(model, c.threshold_sel, cfg_.threshold_std);
				thresholds.push_back(*d.threshold);
			}
			known.push_back(compute_metrics(d.confusion(c.test)));
			if (!cell.held_out.test.empty())
				fresh.push_back(compute_metrics(d.confusion(scale_all(cell.held_out.test, bounds))));
			row.local_steps = base.epochs * batches_per_epoch(c.train.size(), opt.batch_size);
			row.model_bytes = model_size_bytes(hp.arch);
		}
		row.known = mean_metrics(known);
		row.per_device = known;
		if (!fresh.empty())
			row.new_device = mean_metrics(fresh);
		if (!thresholds.empty())
			row.threshold = running_mean(thresholds);
	}

	void run_centralized(const Cell &cell, RunRow &row)
	{
		const auto base = baseline_config(cfg_);
		std::vector<ScalingBounds> local;
		for (const auto &p : cell.clients)
			local.push_back(local_min_max(p.train));
		const auto bounds = merge_bounds(local);

		Client pool;
		pool.seed = derive_seed(cell.seed, Role::client, {0});
		std::vector<Client> parts;
		std::vector<std::vector<Sample>> known_tests;
		for (const auto &p : cell.clients) {
			const auto scaled = scale_partition(p, bounds);
			pool.train.insert(pool.train.end(), scaled.train.begin(), scaled.train.end());
			pool.threshold_sel.insert(pool.threshold_sel.end(), scaled.threshold_sel.begin(), scaled.threshold_sel.end());
			known_tests.push_back(scaled.test);
		}
		const auto grid = build_grid(cfg_, input_dim(cell));
		const std::vector<Client> solo{pool};
		const auto hp = choose(cfg_, grid, solo, base, derive_seed(cell.seed, Role::grid));
		row.hyperparams = hp.label();
		OptimizerConfig opt = base.optimizer;
		opt.l2_lambda = hp.l2;
		const auto model = train_local(init_model(hp.arch, derive_seed(cell.seed, Role::init)), pool.train, base.epochs,
									   opt, pool.seed, base.shuffle);
		row.local_steps = base.epochs * batches_per_epoch(pool.train.size(), opt.batch_size);
		row.model_bytes = model_size_bytes(hp.arch);
		Detector d{model, std::nullopt};
		if (hp.arch.kind == ModelKind::autoencoder) {
			const auto errors = mse_per_sample(model, pool.threshold_sel);
			d.threshold = row.threshold = mean_plus_std(errors, cfg_.threshold_std);
		}
		const auto ev = evaluate(d, known_tests, scale_all(cell.held_out.test, bounds));
		row.known = ev.known;
		row.new_device = ev.new_device;
		row.per_device = ev.per_device;
	}

	const ExperimentConfig &cfg_;
	const RunOptions &opts_;
};

} // namespace detail

/// Run every (fold, repetition) cell of the configuration.
inline ResultBundle run_experiment(const ExperimentConfig &cfg, const RunOptions &opts = {},
								   const std::vector<DeviceStream> *fleet = nullptr)
{
	std::vector<DeviceStream> loaded;
	if (!fleet) {
		loaded = load_fleet(cfg);
		fleet = &loaded;
	}
	const std::size_t n_devices = fleet->size();
	if (n_devices < 2)
		throw ConfigError("an experiment needs at least 2 devices (clients + held-out)");
	std::vector<std::size_t> folds = cfg.folds;
	if (folds.empty())
		for (std::size_t d = 0; d < n_devices; ++d)
			folds.push_back(d);
	for (auto f : folds)
		if (f >= n_devices)
			throw ConfigError("fold " + std::to_string(f) + " names a device that does not exist");

	std::vector<DevicePartition> splits;
	splits.reserve(n_devices);
	for (const auto &d : *fleet)
		splits.push_back(split_device(d, cfg.mode));

	ResultBundle bundle;
	bundle.config = to_json(cfg);
	bundle.mode = std::string(to_string(cfg.mode));
	bundle.benign_fraction = cfg.balance.benign_fraction;
	bundle.algorithm = cfg.approach == Approach::federated ? std::string(to_string(cfg.federation.algorithm)) : "";
	bundle.label = cfg.approach == Approach::federated
					   ? std::string(cfg.federation.algorithm == Algorithm::mini_batch ? "Mini-batch " : "Multi-epoch ") +
							 cfg.federation.aggregation.name()
					   : std::string(cfg.approach == Approach::naive ? "Naive" : "Centralized");

	detail::CellRunner runner(cfg, opts);
	for (auto fold : folds) {
		for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
			detail::Cell cell{fold, rep, derive_seed(cfg.seed, Role::cell, {fold, rep}), {}, {}};
			for (std::size_t d = 0; d < n_devices; ++d) {
				auto part = rebalance(splits[d], cfg.balance, cfg.mode, derive_seed(cell.seed, Role::balance, {d}));
				if (d == fold)
					cell.held_out = std::move(part);
				else
					cell.clients.push_back(std::move(part));
			}
			bundle.rows.push_back(runner.run(cell, bundle.curves));
		}
	}

	const auto input = splits.front().train.empty() ? cfg.data.feature_count : splits.front().train.front().features.size();
	const auto grid = detail::build_grid(cfg, input);
	bundle.cost = config_cost(cfg, grid.front().arch);
	for (const auto &r : bundle.rows)
		if (r.ok() && r.model_bytes > 0 && !cfg.model_size_kb) {
			bundle.cost->model_bytes = r.model_bytes;
			break;
		}
	return bundle;
}

/// Default rule set of the attack sweep: AVG, MED, TM(1), TM(2) and TM(2)
/// after 2-Resampling.
inline std::vector<AggregationSpec> default_sweep_rules()
{
	return {{AggregationRule::avg, 0, 0},
			{AggregationRule::med, 0, 0},
			{AggregationRule::tm, 1, 0},
			{AggregationRule::tm, 2, 0},
			{AggregationRule::tm, 2, 2}};
}

inline std::vector<AttackKind> default_sweep_attacks()
{
	return {AttackKind::flip_all, AttackKind::gradient_factor, AttackKind::model_cancel};
}

/// Cross product attacks x rules x f. The honest f = 0 run is shared by all
/// attacks of a rule. Each combination runs every fold x repetition cell.
inline ResultBundle attack_sweep(const ExperimentConfig &base, const std::vector<std::size_t> &f_values,
								 const std::vector<AttackKind> &attacks = default_sweep_attacks(),
								 const std::vector<AggregationSpec> &rules = default_sweep_rules(),
								 const RunOptions &opts = {})
{
	if (f_values.empty())
		throw ConfigError("attack sweep needs at least one f value");
	if (base.approach != Approach::federated)
		throw ConfigError("attack sweeps need the federated approach");
	if (base.mode != Mode::supervised)
		throw ConfigError("attack sweeps need the supervised mode");
	const auto fleet = load_fleet(base);
	const std::size_t K = fleet.size() - 1;
	for (auto f : f_values)
		if (f >= K)
			throw ConfigError("f = " + std::to_string(f) + " needs more than " + std::to_string(K) + " clients");

	ResultBundle out;
	out.config = to_json(base);
	out.mode = "supervised";
	out.benign_fraction = base.balance.benign_fraction;
	out.algorithm = std::string(to_string(base.federation.algorithm));
	out.label = "attack sweep";

	auto summarize_rows = [](const std::vector<RunRow> &rows, SweepRow &s) {
		const auto m = summarize(rows, false);
		s.runs = m.runs;
		s.failed = rows.size() - m.runs;
		s.mean_f1 = m.f1;
		s.min_f1 = m.min_f1;
		s.max_f1 = m.max_f1;
		s.mean_accuracy = m.accuracy;
		s.mean_tpr = m.tpr;
		s.mean_tnr = m.tnr;
	};

	for (const auto &rule : rules) {
		std::optional<std::vector<RunRow>> honest;
		for (auto kind : attacks) {
			for (auto f : f_values) {
				ExperimentConfig cfg = base;
				cfg.federation.aggregation = rule;
				cfg.attack.kind = f == 0 ? AttackKind::none : kind;
				cfg.attack.f = f;
				std::vector<RunRow> rows;
				if (f == 0 && honest) {
					rows = *honest;
				} else {
					rows = run_experiment(cfg, opts, &fleet).rows;
					out.rows.insert(out.rows.end(), rows.begin(), rows.end());
					if (f == 0)
						honest = rows;
				}
				SweepRow s;
				s.attack = std::string(to_string(kind));
				s.aggregation = rule.name();
				s.f = f;
				summarize_rows(rows, s);
				out.sweep.push_back(s);
			}
		}
	}
	return out;
}

} // namespace fedids
