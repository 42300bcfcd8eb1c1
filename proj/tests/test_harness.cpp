#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace fedids;
using namespace fedids::testing;

namespace {

/// A small, fast configuration over a synthetic fleet.
json tiny_config(std::size_t devices = 3)
{
	return {{"name", "tiny"},
			{"mode", "supervised"},
			{"approach", "federated"},
			{"data",
			 {{"source", "synthetic"},
			  {"synthetic", {{"n_devices", devices}, {"samples_per_device", 600}, {"feature_dim", 6}, {"seed", 3}}}}},
			{"balance", {{"benign_fraction", 0.5}, {"samples_per_device", 600}}},
			{"federation", {{"algorithm", "mini_batch"}, {"epochs", 1}, {"batch_size", 8}, {"learning_rate", 0.1}}},
			{"model", {{"architecture", "classifier-B"}, {"l2", 0.0}}},
			{"folds", "all"},
			{"repetitions", 2},
			{"seed", 5}};
}

ExperimentConfig tiny(std::size_t devices = 3) { return parse_config(tiny_config(devices)); }

} // namespace

TEST(Config, RoundTrip)
{
	for (const auto &[name, j] : builtin_profiles()) {
		const auto cfg = parse_config(j);
		const auto again = parse_config(to_json(cfg));
		EXPECT_EQ(to_json(again), to_json(cfg)) << name;
	}
}

TEST(Config, ProfilesPresent)
{
	const auto p = builtin_profiles();
	for (const char *name : {"supervised-50", "supervised-7.87", "supervised-95", "unsupervised", "adversarial-95",
							 "supervised-50-naive", "supervised-50-centralized", "desk-supervised", "desk-adversarial",
							 "desk-unsupervised"})
		EXPECT_TRUE(p.count(name)) << name;
	const auto adv = load_config("adversarial-95");
	EXPECT_EQ(adv.federation.optimizer.batch_size, 64u);
	EXPECT_EQ(adv.balance.benign_fraction, 0.95);
	const auto uns = load_config("unsupervised");
	EXPECT_EQ(uns.balance.samples_per_device, 10000u);
	EXPECT_EQ(uns.federation.epochs, 120u);
	EXPECT_EQ(load_config("supervised-50").balance.samples_per_device, 100000u);
	EXPECT_EQ(load_config("supervised-50").grid->architectures.size() * load_config("supervised-50").grid->l2.size(),
			  12u);
}

TEST(Config, InvalidCombinations)
{
	auto j = tiny_config();
	j["approach"] = "centralized";
	j["attack"] = {{"kind", "model_cancel"}, {"f", 1}};
	EXPECT_THROW(parse_config(j), ConfigError);
	j = tiny_config();
	j["mode"] = "unsupervised";
	j["attack"] = {{"kind", "flip_all"}, {"f", 1}};
	EXPECT_THROW(parse_config(j), ConfigError);
	j = tiny_config();
	j["attack"] = {{"kind", "gradient_factor"}, {"f", 0}};
	EXPECT_THROW(parse_config(j), ConfigError);
	EXPECT_THROW(load_config("no-such-profile-or-file"), ConfigError);
}

TEST(Config, FileWithProfileOverride)
{
	TempDir dir;
	write_text(dir.path() / "c.json", R"({"profile": "supervised-95", "repetitions": 2, "federation": {"epochs": 1}})");
	const auto cfg = load_config((dir.path() / "c.json").string());
	EXPECT_EQ(cfg.repetitions, 2u);
	EXPECT_EQ(cfg.federation.epochs, 1u);
	EXPECT_EQ(cfg.balance.benign_fraction, 0.95);
	write_text(dir.path() / "bad.json", "{ not json");
	EXPECT_THROW(load_config((dir.path() / "bad.json").string()), ParseError);
}

TEST(Run, RowsCarryCellIdentity)
{
	const auto cfg = tiny();
	const auto b = run_experiment(cfg);
	ASSERT_EQ(b.rows.size(), 6u);
	for (const auto &r : b.rows) {
		EXPECT_EQ(r.seed, derive_seed(cfg.seed, Role::cell, {r.fold, r.repetition}));
		EXPECT_TRUE(r.ok());
		EXPECT_EQ(r.held_out, "device-" + std::to_string(r.fold));
		EXPECT_EQ(r.per_device.size(), 2u);
		ASSERT_TRUE(r.new_device);
		EXPECT_EQ(r.transmissions, batches_per_epoch(r.train_size, 8));
	}
}

TEST(Run, SingleCellRerunMatches)
{
	auto cfg = tiny();
	const auto all = run_experiment(cfg);
	cfg.folds = {1};
	cfg.repetitions = 2;
	const auto one = run_experiment(cfg);
	const auto &a = all.rows[3];
	const auto &b = one.rows[1];
	ASSERT_EQ(a.fold, 1u);
	ASSERT_EQ(a.repetition, 1u);
	EXPECT_EQ(to_json(a.known), to_json(b.known));
}

TEST(Run, DeterministicFiles)
{
	TempDir dir;
	const auto cfg = tiny();
	write_bundle(dir.path() / "a.json", run_experiment(cfg));
	write_bundle(dir.path() / "b.json", run_experiment(cfg));
	std::ifstream a(dir.path() / "a.json"), b(dir.path() / "b.json");
	const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
	EXPECT_FALSE(sa.empty());
	EXPECT_EQ(sa, sb);
}

TEST(Run, NaiveAveragesClients)
{
	auto j = tiny_config();
	j["approach"] = "naive";
	j["repetitions"] = 1;
	const auto b = run_experiment(parse_config(j));
	for (const auto &r : b.rows) {
		ASSERT_EQ(r.per_device.size(), 2u);
		EXPECT_NEAR(r.known.accuracy, 0.5 * (r.per_device[0].accuracy + r.per_device[1].accuracy), 1e-12);
		EXPECT_EQ(r.transmissions, 0u);
	}
}

TEST(Run, CentralizedAndUnsupervised)
{
	auto j = tiny_config();
	j["approach"] = "centralized";
	j["repetitions"] = 1;
	j["folds"] = {0};
	const auto c = run_experiment(parse_config(j));
	ASSERT_EQ(c.rows.size(), 1u);
	EXPECT_EQ(c.rows[0].local_steps, batches_per_epoch(2 * 474, 64));

	j = tiny_config();
	j["mode"] = "unsupervised";
	j["model"] = {{"architecture", "autoencoder-A"}, {"l2", 0.0}};
	j["repetitions"] = 1;
	j["folds"] = {2};
	j["eval_every"] = 5;
	TempDir dir;
	const auto u = run_experiment(parse_config(j), {dir.path()});
	ASSERT_EQ(u.rows.size(), 1u);
	ASSERT_TRUE(u.rows[0].threshold);
	EXPECT_GT(*u.rows[0].threshold, 0.0);
	EXPECT_FALSE(u.curves.empty());
	for (const auto &p : u.curves)
		EXPECT_TRUE(p.threshold.has_value());
	EXPECT_TRUE(std::filesystem::exists(dir.path() / "rounds" / "fold2_rep0.jsonl"));
}

TEST(Run, FullProfileFortyFiveRows)
{
	auto j = builtin_profiles().at("supervised-50");
	j["data"]["synthetic"]["samples_per_device"] = 300;
	j["data"]["synthetic"]["feature_dim"] = 5;
	j["balance"]["samples_per_device"] = 300;
	j["grid"] = nullptr;
	j["model"] = {{"architecture", "classifier-A"}, {"l2", 0.0}};
	j["federation"]["epochs"] = 1;
	const auto b = run_experiment(parse_config(j));
	EXPECT_EQ(b.rows.size(), 45u);
	const auto bj = to_json(b);
	EXPECT_EQ(bj["mean"]["known"]["runs"], 45);
	EXPECT_EQ(bj["mean"]["new_device"]["runs"], 45);
}

TEST(Run, GridSearchRecordsChoice)
{
	auto j = tiny_config();
	j["repetitions"] = 1;
	j["folds"] = {0};
	j["grid"] = {{"architectures", {"classifier-A", "classifier-B"}}, {"l2", {0.0, 1e-4}}, {"epochs", 1}, {"rounds", 1}};
	const auto b = run_experiment(parse_config(j));
	EXPECT_FALSE(b.rows[0].hyperparams.empty());
}

TEST(Run, UnresolvedDataSource)
{
	auto j = tiny_config();
	j["data"] = {{"source", "manifest"}, {"manifest", "/nonexistent/manifest.csv"}};
	EXPECT_THROW(run_experiment(parse_config(j)), ConfigError);
}

TEST(Run, ManifestSource)
{
	TempDir dir;
	SyntheticSpec spec;
	spec.n_devices = 3;
	spec.samples_per_device = 400;
	spec.feature_dim = 4;
	const auto fleet = generate_synthetic_fleet(spec);
	{
		std::ofstream m(dir.path() / "manifest.csv");
		for (const auto &d : fleet) {
			write_device_csv(dir.path() / (d.device_id + ".csv"), d.segments[0], false);
			m << d.device_id << ',' << d.device_id << ".csv,labeled\n";
		}
	}
	auto j = tiny_config();
	j["data"] = {{"source", "manifest"}, {"manifest", (dir.path() / "manifest.csv").string()}, {"feature_count", 4}};
	j["repetitions"] = 1;
	j["folds"] = {0};
	const auto b = run_experiment(parse_config(j));
	EXPECT_EQ(b.rows.size(), 1u);
	EXPECT_TRUE(b.rows[0].ok());
}

TEST(Run, AttackRowsRecordMaliciousClients)
{
	auto j = tiny_config(5);
	j["repetitions"] = 1;
	j["folds"] = {0, 1};
	j["attack"] = {{"kind", "model_cancel"}, {"f", 1}};
	const auto b = run_experiment(parse_config(j));
	for (const auto &r : b.rows) {
		EXPECT_EQ(r.malicious.size(), 1u);
		EXPECT_EQ(r.attack, "model_cancel");
		EXPECT_EQ(r.f, 1u);
	}
	j["attack"] = {{"kind", "model_cancel"}, {"f", 4}};
	EXPECT_THROW(run_experiment(parse_config(j)), ConfigError);
}

TEST(Sweep, ShapeAndErrors)
{
	auto j = tiny_config(6);
	j["repetitions"] = 1;
	j["folds"] = {0};
	j["balance"]["benign_fraction"] = 0.95;
	j["federation"]["batch_size"] = 64;
	const auto cfg = parse_config(j);
	EXPECT_THROW(attack_sweep(cfg, {}), ConfigError);
	EXPECT_THROW(attack_sweep(cfg, {0, 5}), ConfigError);
	auto naive = cfg;
	naive.approach = Approach::naive;
	EXPECT_THROW(attack_sweep(naive, {0, 1}), ConfigError);

	const auto b = attack_sweep(cfg, {0, 1});
	EXPECT_EQ(b.sweep.size(), 5u * 3u * 2u);
	std::set<std::string> rules_with_f0;
	std::set<std::string> rules;
	for (const auto &s : b.sweep) {
		rules.insert(s.aggregation);
		if (s.f == 0)
			rules_with_f0.insert(s.aggregation);
		EXPECT_EQ(s.runs + s.failed, 1u);
		EXPECT_LE(s.min_f1, s.mean_f1);
		EXPECT_GE(s.max_f1, s.mean_f1);
	}
	EXPECT_EQ(rules, (std::set<std::string>{"AVG", "MED", "TM(1)", "TM(2)", "TM(2)+2-Resampling"}));
	EXPECT_EQ(rules_with_f0, rules);
	// one honest run per rule plus one per (rule, attack) at f = 1
	EXPECT_EQ(b.rows.size(), 5u + 5u * 3u);
}

TEST(Cost, ClosedForms)
{
	const auto sup = cost_closed_form(Algorithm::mini_batch, 79000, 8, 4, 30, 94000);
	EXPECT_EQ(sup.transmissions, 39500u);
	EXPECT_EQ(sup.local_steps, 39500u);
	const auto sup_me = cost_closed_form(Algorithm::multi_epoch, 79000, 64, 4, 30, 94000);
	EXPECT_EQ(sup_me.transmissions, 30u);
	EXPECT_EQ(sup_me.local_steps, 148080u);
	const auto uns = cost_closed_form(Algorithm::mini_batch, 3950, 8, 120, 30, 27000);
	EXPECT_EQ(uns.local_steps, 59280u);
	const auto uns_me = cost_closed_form(Algorithm::multi_epoch, 3950, 64, 120, 30, 27000);
	EXPECT_EQ(uns_me.local_steps, 223200u);
	EXPECT_EQ(format_bytes(sup_me.communication_bytes()), "2.82 MB");
	EXPECT_EQ(format_bytes(sup.communication_bytes()), "3.713 GB");
}

TEST(Cost, FromProfiles)
{
	const auto arch = classifier_preset('B');
	EXPECT_EQ(config_cost(load_config("supervised-50"), arch).transmissions, 39500u);
	const auto me = config_cost(load_config("supervised-50-multi-epoch"), arch);
	EXPECT_EQ(me.transmissions, 30u);
	EXPECT_EQ(me.local_steps, 148080u);
	EXPECT_EQ(format_bytes(me.communication_bytes()), "2.82 MB");
	EXPECT_EQ(config_cost(load_config("unsupervised"), arch).local_steps, 59280u);
	EXPECT_EQ(config_cost(load_config("unsupervised-multi-epoch"), arch).local_steps, 223200u);
	EXPECT_EQ(model_size_bytes(classifier_preset('A')), 29 + 8.0 * 116);
}

TEST(Bundle, JsonRoundTrip)
{
	const auto b = run_experiment(tiny());
	const auto back = bundle_from_json(to_json(b));
	EXPECT_EQ(to_json(back), to_json(b));
	EXPECT_THROW(bundle_from_json(json{{"rows", {{{"fold", 0}}}}}), ParseError);
}

TEST(Report, MetricsTableLayout)
{
	auto b = run_experiment(tiny());
	const auto md = metrics_table({b});
	for (const char *metric : {"| Acc |", "| TPR |", "| TNR |"}) {
		EXPECT_NE(md.find(std::string(metric) + " known |"), std::string::npos) << md;
		EXPECT_NE(md.find(std::string(metric) + " new |"), std::string::npos) << md;
	}
	EXPECT_NE(md.find("Mini-batch AVG"), std::string::npos);
	EXPECT_NE(md.find("50% benign"), std::string::npos);
}

TEST(Report, EmptyBundleSucceeds)
{
	TempDir dir;
	const std::vector<ResultBundle> none{ResultBundle{}};
	EXPECT_NO_THROW(write_report(none, ReportFormat::markdown, dir.path()));
	EXPECT_NO_THROW(write_report(none, ReportFormat::csv, dir.path()));
	EXPECT_TRUE(std::filesystem::exists(dir.path() / "report.md"));
	EXPECT_TRUE(std::filesystem::exists(dir.path() / "results.csv"));
	EXPECT_THROW(parse_report_format("pdf"), ConfigError);
}

TEST(Report, CostTableMultiEpochPreset)
{
	ResultBundle b;
	b.label = "Multi-epoch AVG";
	b.mode = "supervised";
	b.benign_fraction = 0.5;
	b.cost = cost_closed_form(Algorithm::multi_epoch, 79000, 64, 4, 30, 94000);
	const auto md = cost_table({b});
	EXPECT_NE(md.find("| 30 |"), std::string::npos) << md;
	EXPECT_NE(md.find("2.82 MB"), std::string::npos) << md;
	EXPECT_NE(cost_csv({b}).find(",30,148080,"), std::string::npos);
}

TEST(Report, CurvesAndSweepCsv)
{
	auto j = tiny_config();
	j["repetitions"] = 1;
	j["eval_every"] = 10;
	const auto b = run_experiment(parse_config(j));
	const auto csv = curves_csv({b});
	EXPECT_NE(csv.find(",known,accuracy,"), std::string::npos);
	EXPECT_NE(csv.find(",new,f1,"), std::string::npos);
	ResultBundle s;
	s.sweep.push_back({"model_cancel", "AVG", 1, 45, 0, 0.05, 0.0, 0.1, 0.9, 0.0, 1.0});
	EXPECT_NE(sweep_csv({s}).find("model_cancel,AVG,1,45,0,0.05,0,0.1"), std::string::npos);
}
