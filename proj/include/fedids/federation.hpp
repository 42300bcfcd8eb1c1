#pragma once

// Client/server training orchestration. Two loops share one local SGD step:
// Mini-batch aggregation (aggregate after every client mini-batch) and
// Multi-epoch aggregation (aggregate once per round after E local epochs).
// Also hosts the collaborative grid search, the mean+std threshold protocol
// and model evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adversary.hpp"
#include "aggregation.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "neuralnet.hpp"

namespace fedids {

enum class Algorithm { mini_batch, multi_epoch };

inline std::string_view to_string(Algorithm a) { return a == Algorithm::mini_batch ? "mini_batch" : "multi_epoch"; }

inline Algorithm parse_algorithm(std::string_view s)
{
	if (s == "mini_batch")
		return Algorithm::mini_batch;
	if (s == "multi_epoch")
		return Algorithm::multi_epoch;
	throw ConfigError("unknown federated algorithm '" + std::string(s) + "'");
}

struct FederationConfig {
	Algorithm algorithm = Algorithm::mini_batch;
	std::size_t epochs = 4;
	/// Multi-epoch only.
	std::size_t rounds = 30;
	/// batch_size is the per-client batch.
	OptimizerConfig optimizer{0.05, 0.0, 8};
	/// Multi-epoch learning rate for round t is lr * lr_decay^t. Mini-batch
	/// keeps the rate constant.
	double lr_decay = 0.9;
	AggregationSpec aggregation;
	/// Per-aggregation probability that a client misses the deadline.
	double dropout = 0.0;
	bool shuffle = true;
	std::uint64_t seed = 0;
};

/// One federation participant. `train`, `threshold_sel` and `test` are
/// already scaled with the federation's bounds.
struct Client {
	std::size_t id = 0;
	std::vector<Sample> train;
	std::vector<Sample> threshold_sel;
	std::vector<Sample> test;
	/// Model poisoning behaviour; label flips are applied to `train` upfront.
	AttackKind attack = AttackKind::none;
	double alpha = 1.0;
	std::uint64_t seed = 0;

	bool malicious() const { return attack != AttackKind::none; }
};

/// Local steps per epoch: n / B rounded to nearest, at least 1. When this
/// rounds up the last batch is short; when it rounds down the epoch's tail is
/// skipped.
inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size)
{
	if (batch_size == 0)
		throw ConfigError("batch size must be positive");
	const auto b = static_cast<std::size_t>(std::llround(static_cast<double>(n) / static_cast<double>(batch_size)));
	return std::max<std::size_t>(b, 1);
}

/// Per-client SGD machinery: scratch network, gradient buffer, the client's
/// private shuffling stream and its current epoch order.
class LocalTrainer {
public:
	LocalTrainer(const ArchitectureSpec &arch, std::uint64_t seed)
		: net_(arch), grad_(arch.parameter_count()), rng_(seed) {}

	void begin_epoch(std::size_t n, bool shuffle)
	{
		order_.resize(n);
		for (std::size_t i = 0; i < n; ++i)
			order_[i] = i;
		if (shuffle)
			rng_.shuffle(order_);
	}

	/// One SGD step from `model` on batch `index` of the current epoch order.
	/// The gradient is multiplied by `grad_factor` before the update. Returns
	/// the updated model; the batch loss (before the step) goes to `loss_out`.
	ModelParameters step(const ModelParameters &model, std::span<const Sample> data, std::size_t index,
						 const OptimizerConfig &opt, double lr, double grad_factor, double *loss_out = nullptr)
	{
		const std::size_t begin = index * opt.batch_size;
		const std::size_t end = std::min(begin + opt.batch_size, order_.size());
		if (begin >= end)
			throw ConfigError("batch index past the end of the epoch");
		batch_.clear();
		for (std::size_t i = begin; i < end; ++i)
			batch_.push_back(&data[order_[i]]);
		const double l = net_.loss_and_gradient(model.flat, batch_, opt.l2_lambda, grad_);
		if (loss_out)
			*loss_out = l;
		if (grad_factor != 1.0)
			for (auto &g : grad_)
				g *= grad_factor;
		return sgd_step(model, grad_, lr);
	}

private:
	Network net_;
	std::vector<double> grad_;
	Rng rng_;
	std::vector<std::size_t> order_;
	std::vector<const Sample *> batch_;
};

/// Plain SGD: `epochs` passes over `data` with batch size opt.batch_size.
/// Uses the same batching and shuffling as a federated client with the same
/// seed.
inline ModelParameters train_local(ModelParameters model, std::span<const Sample> data, std::size_t epochs,
								   const OptimizerConfig &opt, std::uint64_t seed, bool shuffle = true)
{
	if (data.empty())
		throw EmptyPartError("local training on an empty train set");
	LocalTrainer trainer(model.arch, seed);
	const auto steps = batches_per_epoch(data.size(), opt.batch_size);
	for (std::size_t e = 0; e < epochs; ++e) {
		trainer.begin_epoch(data.size(), shuffle);
		for (std::size_t j = 0; j < steps; ++j)
			model = trainer.step(model, data, j, opt, opt.learning_rate, 1.0);
	}
	return model;
}

struct RoundRecord {
	/// 1-based aggregation count.
	std::size_t aggregation = 0;
	/// 1-based federation round (Multi-epoch) or data epoch (Mini-batch).
	std::size_t round = 0;
	/// Data epochs completed, fractional within a Mini-batch epoch.
	double epoch = 0.0;
	double lr = 0.0;
	/// Batch loss per client; empty for clients that did not train.
	std::vector<std::optional<double>> client_loss;
};

using RoundObserver = std::function<void(const RoundRecord &, const ModelParameters &)>;

struct FederationResult {
	ModelParameters model;
	/// Models sent by each client.
	std::vector<std::size_t> transmissions;
	/// SGD steps taken by each client.
	std::vector<std::size_t> local_steps;
	std::size_t aggregations = 0;
};

namespace detail {

inline void check_clients(std::span<const Client> clients, const ModelParameters &initial, const FederationConfig &cfg)
{
	if (clients.empty())
		throw ConfigError("a federation needs at least one client");
	if (cfg.algorithm == Algorithm::multi_epoch && cfg.rounds == 0)
		throw ConfigError("Multi-epoch aggregation needs at least one round");
	if (cfg.optimizer.batch_size == 0)
		throw ConfigError("batch size must be positive");
	if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
		throw ConfigError("dropout must lie in [0, 1)");
	for (const auto &c : clients) {
		if (c.train.empty() && c.attack != AttackKind::model_cancel)
			throw EmptyPartError("client " + std::to_string(c.id) + " has no training data");
		for (const auto &s : c.train)
			if (s.features.size() != initial.arch.input_dim)
				throw DimensionError("client " + std::to_string(c.id) + " data does not match the model input");
	}
}

inline ModelParameters server_aggregate(std::span<const ModelParameters> models, const AggregationSpec &spec, Rng &rng)
{
	auto out = aggregate(models, spec, rng);
	if (!all_finite(out.flat))
		throw PoisonedUpdateError("aggregated model is not finite");
	return out;
}

template <class F>
ModelParameters guarded(std::size_t client, F &&f)
{
	try {
		return f();
	} catch (const PoisonedUpdateError &e) {
		if (e.client())
			throw;
		throw PoisonedUpdateError(e.what(), client);
	}
}

} // namespace detail

/// Mini-batch aggregation: every client takes one SGD step on its next batch,
/// submits, and the server aggregates, until `epochs` passes over the data are
/// complete.
inline FederationResult run_mini_batch(std::span<const Client> clients, const ModelParameters &initial,
									   const FederationConfig &cfg, const RoundObserver &observer = {})
{
	detail::check_clients(clients, initial, cfg);
	const std::size_t K = clients.size();
	std::size_t n = 0;
	for (const auto &c : clients) {
		if (c.train.empty())
			continue;
		if (n == 0)
			n = c.train.size();
		else if (c.train.size() != n)
			throw ConfigError("Mini-batch aggregation needs equal train sizes across clients");
	}
	const std::size_t steps = n == 0 ? 1 : batches_per_epoch(n, cfg.optimizer.batch_size);

	std::vector<LocalTrainer> trainers;
	trainers.reserve(K);
	for (const auto &c : clients)
		trainers.emplace_back(initial.arch, c.seed);
	Rng server(derive_seed(cfg.seed, Role::server));

	FederationResult result{initial, std::vector<std::size_t>(K, 0), std::vector<std::size_t>(K, 0), 0};
	auto &global = result.model;
	std::vector<ModelParameters> submitted;
	RoundRecord record;
	const double lr = cfg.optimizer.learning_rate;

	for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
		for (std::size_t k = 0; k < K; ++k)
			trainers[k].begin_epoch(clients[k].train.size(), cfg.shuffle);
		for (std::size_t j = 0; j < steps; ++j) {
			submitted.clear();
			record.client_loss.assign(K, std::nullopt);
			for (std::size_t k = 0; k < K; ++k) {
				const auto &c = clients[k];
				if (cfg.dropout > 0.0 && server.uniform() < cfg.dropout)
					continue;
				if (c.attack == AttackKind::model_cancel) {
					submitted.push_back(cancel_update(global, c.alpha));
				} else {
					const double factor = c.attack == AttackKind::gradient_factor ? c.alpha : 1.0;
					double l = 0.0;
					submitted.push_back(detail::guarded(c.id, [&] {
						return trainers[k].step(global, c.train, j, cfg.optimizer, lr, factor, &l);
					}));
					record.client_loss[k] = l;
					++result.local_steps[k];
				}
				++result.transmissions[k];
			}
			if (!submitted.empty())
				global = detail::server_aggregate(submitted, cfg.aggregation, server);
			++result.aggregations;
			if (observer) {
				record.aggregation = result.aggregations;
				record.round = epoch + 1;
				record.epoch = static_cast<double>(epoch) + static_cast<double>(j + 1) / static_cast<double>(steps);
				record.lr = lr;
				observer(record, global);
			}
		}
	}
	return result;
}

/// Multi-epoch aggregation: for each of T rounds every client trains E full
/// epochs from the current global model with rate lr * decay^t, then the
/// server aggregates once.
inline FederationResult run_multi_epoch(std::span<const Client> clients, const ModelParameters &initial,
										const FederationConfig &cfg, const RoundObserver &observer = {})
{
	detail::check_clients(clients, initial, cfg);
	const std::size_t K = clients.size();
	std::vector<LocalTrainer> trainers;
	trainers.reserve(K);
	for (const auto &c : clients)
		trainers.emplace_back(initial.arch, c.seed);
	Rng server(derive_seed(cfg.seed, Role::server));

	FederationResult result{initial, std::vector<std::size_t>(K, 0), std::vector<std::size_t>(K, 0), 0};
	auto &global = result.model;
	std::vector<ModelParameters> submitted;
	RoundRecord record;

	for (std::size_t t = 0; t < cfg.rounds; ++t) {
		const double lr = cfg.optimizer.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(t));
		submitted.clear();
		record.client_loss.assign(K, std::nullopt);
		for (std::size_t k = 0; k < K; ++k) {
			const auto &c = clients[k];
			if (cfg.dropout > 0.0 && server.uniform() < cfg.dropout)
				continue;
			if (c.attack == AttackKind::model_cancel) {
				submitted.push_back(cancel_update(global, c.alpha));
			} else {
				const double factor = c.attack == AttackKind::gradient_factor ? c.alpha : 1.0;
				const auto steps = batches_per_epoch(c.train.size(), cfg.optimizer.batch_size);
				double loss_sum = 0.0;
				ModelParameters local = global;
				for (std::size_t e = 0; e < cfg.epochs; ++e) {
					trainers[k].begin_epoch(c.train.size(), cfg.shuffle);
					for (std::size_t j = 0; j < steps; ++j) {
						double l = 0.0;
						local = detail::guarded(c.id, [&] {
							return trainers[k].step(local, c.train, j, cfg.optimizer, lr, factor, &l);
						});
						loss_sum += l;
						++result.local_steps[k];
					}
				}
				if (cfg.epochs > 0)
					record.client_loss[k] = loss_sum / static_cast<double>(cfg.epochs * steps);
				submitted.push_back(std::move(local));
			}
			++result.transmissions[k];
		}
		if (!submitted.empty())
			global = detail::server_aggregate(submitted, cfg.aggregation, server);
		++result.aggregations;
		if (observer) {
			record.aggregation = result.aggregations;
			record.round = t + 1;
			record.epoch = static_cast<double>((t + 1) * cfg.epochs);
			record.lr = lr;
			observer(record, global);
		}
	}
	return result;
}

inline FederationResult run_federation(std::span<const Client> clients, const ModelParameters &initial,
									   const FederationConfig &cfg, const RoundObserver &observer = {})
{
	return cfg.algorithm == Algorithm::mini_batch ? run_mini_batch(clients, initial, cfg, observer)
												  : run_multi_epoch(clients, initial, cfg, observer);
}

// ---------------------------------------------------------------------------
// Thresholds

enum class StdKind { population, sample };

/// mean + std of the values; population std divides by n, sample by n - 1
/// (0 for a single value).
inline double mean_plus_std(std::span<const double> values, StdKind kind = StdKind::population)
{
	if (values.empty())
		throw EmptyPartError("threshold of an empty set");
	double mean = 0.0;
	for (double v : values)
		mean += v;
	mean /= static_cast<double>(values.size());
	double ss = 0.0;
	for (double v : values)
		ss += (v - mean) * (v - mean);
	const std::size_t n = values.size();
	double var = 0.0;
	if (kind == StdKind::population)
		var = ss / static_cast<double>(n);
	else if (n > 1)
		var = ss / static_cast<double>(n - 1);
	return mean + std::sqrt(var);
}

/// Client threshold: mean + std of the reconstruction errors over its
/// threshold-selection set.
inline double local_threshold(const ModelParameters &model, std::span<const Sample> threshold_set,
							  StdKind kind = StdKind::population)
{
	if (threshold_set.empty())
		throw EmptyPartError("threshold-selection set is empty");
	const auto mse = mse_per_sample(model, threshold_set);
	return mean_plus_std(mse, kind);
}

/// Server threshold: arithmetic mean of the local thresholds. Differs in
/// general from mean + std over the pooled errors.
inline double global_threshold(std::span<const double> locals)
{
	if (locals.empty())
		throw ConfigError("global threshold needs at least one local threshold");
	double sum = 0.0;
	for (double t : locals)
		sum += t;
	return sum / static_cast<double>(locals.size());
}

/// Anomalous iff reconstruction error is strictly above the threshold.
inline int detect(const ModelParameters &model, double threshold, const Sample &sample)
{
	return mse_per_sample(model, std::span<const Sample>(&sample, 1))[0] > threshold ? kAttack : kBenign;
}

// ---------------------------------------------------------------------------
// Evaluation

/// A trained model plus, for autoencoders, its detection threshold.
struct Detector {
	ModelParameters model;
	std::optional<double> threshold;

	std::vector<int> predict(std::span<const Sample> samples) const
	{
		std::vector<int> out;
		out.reserve(samples.size());
		if (model.arch.kind == ModelKind::classifier) {
			for (double p : predict_proba(model, samples))
				out.push_back(classify(p));
		} else {
			if (!threshold)
				throw ConfigError("an autoencoder detector needs a threshold");
			for (double e : mse_per_sample(model, samples))
				out.push_back(e > *threshold ? kAttack : kBenign);
		}
		return out;
	}

	Confusion confusion(std::span<const Sample> samples) const
	{
		Confusion c;
		const auto pred = predict(samples);
		for (std::size_t i = 0; i < samples.size(); ++i) {
			if (!samples[i].label)
				throw ConfigError("evaluation needs labeled test samples");
			c.add(pred[i], *samples[i].label);
		}
		return c;
	}
};

struct Evaluation {
	/// Pooled over the clients' test parts.
	Metrics known;
	std::vector<Metrics> per_device;
	std::optional<Metrics> new_device;
};

inline Evaluation evaluate(const Detector &detector, std::span<const std::vector<Sample>> known_tests,
						   std::span<const Sample> new_device_test)
{
	Evaluation ev;
	Confusion pooled;
	for (const auto &t : known_tests) {
		const auto c = detector.confusion(t);
		pooled += c;
		ev.per_device.push_back(compute_metrics(c));
	}
	ev.known = compute_metrics(pooled);
	if (!new_device_test.empty())
		ev.new_device = compute_metrics(detector.confusion(new_device_test));
	return ev;
}

// ---------------------------------------------------------------------------
// Collaborative grid search

struct HyperParams {
	ArchitectureSpec arch;
	double l2 = 0.0;

	std::string label() const
	{
		char buf[32];
		std::snprintf(buf, sizeof buf, "%g", l2);
		return arch.describe() + " l2=" + buf;
	}
};

struct GridSearchResult {
	std::size_t chosen = 0;
	bool higher_is_better = true;
	/// [grid point] -> mean score over clients.
	std::vector<double> mean_scores;
	/// [grid point][client] -> validation score.
	std::vector<std::vector<double>> client_scores;
};

/// Index of the best mean; ties resolve to the earliest point.
inline std::size_t select_best(std::span<const double> means, bool higher_is_better)
{
	if (means.empty())
		throw ConfigError("grid search over an empty grid");
	std::size_t best = 0;
	for (std::size_t i = 1; i < means.size(); ++i) {
		const bool better = higher_is_better ? means[i] > means[best] : means[i] < means[best];
		if (better)
			best = i;
	}
	return best;
}

/// For every grid point: hold out the chronologically last 10% of each
/// client's train set, run the configured federated training on the rest,
/// and collect each client's validation accuracy (classifiers) or
/// reconstruction loss (autoencoders). The point with the best mean wins.
inline GridSearchResult collaborative_grid_search(std::span<const Client> clients, std::span<const HyperParams> grid,
												  const FederationConfig &cfg, std::uint64_t seed)
{
	if (grid.empty())
		throw ConfigError("grid search over an empty grid");
	const auto kind = grid.front().arch.kind;
	for (const auto &h : grid)
		if (h.arch.kind != kind)
			throw ConfigError("a grid must not mix classifiers and autoencoders");

	std::vector<Client> fit(clients.begin(), clients.end());
	std::vector<std::vector<Sample>> validation(clients.size());
	for (std::size_t k = 0; k < fit.size(); ++k) {
		auto &train = fit[k].train;
		if (train.empty())
			continue;
		if (train.size() < 2)
			throw EmptyPartError("client " + std::to_string(fit[k].id) + " has too little data for validation");
		const std::size_t n_val = std::max<std::size_t>(1, train.size() / 10);
		validation[k].assign(train.end() - static_cast<std::ptrdiff_t>(n_val), train.end());
		train.resize(train.size() - n_val);
	}

	GridSearchResult result;
	result.higher_is_better = kind == ModelKind::classifier;
	for (std::size_t g = 0; g < grid.size(); ++g) {
		FederationConfig c = cfg;
		c.optimizer.l2_lambda = grid[g].l2;
		const auto initial = init_model(grid[g].arch, derive_seed(seed, Role::grid, {g}));
		const auto model = run_federation(fit, initial, c).model;
		std::vector<double> scores;
		for (std::size_t k = 0; k < fit.size(); ++k) {
			if (validation[k].empty())
				continue;
			if (kind == ModelKind::classifier) {
				Detector d{model, std::nullopt};
				scores.push_back(compute_metrics(d.confusion(validation[k])).accuracy);
			} else {
				scores.push_back(loss(model, validation[k], 0.0));
			}
		}
		result.mean_scores.push_back(running_mean(scores));
		result.client_scores.push_back(std::move(scores));
	}
	result.chosen = select_best(result.mean_scores, result.higher_is_better);
	return result;
}

} // namespace fedids
