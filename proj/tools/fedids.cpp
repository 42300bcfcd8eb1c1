// fedids command-line driver.
//
//   fedids ingest <manifest> [--header] [--features N]
//   fedids synth <spec.json|default> --out DIR
//   fedids run <config|profile> [--name NAME]
//   fedids sweep <config|profile> --f 0,1,2,3 [--attacks ...] [--rules ...]
//   fedids report <bundle.json...> --format md|csv [--out DIR]
//   fedids profiles
//
// Results go under $FEDIDS_RESULTS_DIR (default ./results). Failures print a
// one-line JSON record on stderr and exit nonzero.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedids/fedids.hpp"

namespace fs = std::filesystem;
using fedids::json;

namespace {

fs::path results_dir()
{
	const char *env = std::getenv("FEDIDS_RESULTS_DIR");
	return env && *env ? fs::path(env) : fs::path("results");
}

int fail(const std::string &kind, const std::string &message, int code)
{
	std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
	return code;
}

json summary_json(const fedids::ResultBundle &b)
{
	json out{{"label", b.label}, {"rows", b.rows.size()}};
	for (bool nd : {false, true}) {
		const auto s = fedids::summarize(b.rows, nd);
		out[nd ? "new_device" : "known"] = {{"runs", s.runs}, {"accuracy", s.accuracy}, {"tpr", s.tpr},
											{"tnr", s.tnr}, {"f1", s.f1}};
	}
	return out;
}

int cmd_ingest(const std::string &manifest, bool header, std::size_t features)
{
	const auto devices = fedids::load_manifest(manifest, header, features);
	json out{{"manifest", manifest}, {"devices", json::array()}};
	for (const auto &d : devices) {
		std::size_t benign = 0, attack = 0;
		for (const auto &seg : d.segments)
			for (const auto &s : seg)
				(s.label == fedids::kBenign ? benign : attack) += 1;
		out["devices"].push_back({{"device_id", d.device_id}, {"segments", d.segments.size()},
								  {"benign", benign}, {"attack", attack}});
	}
	const auto dir = results_dir();
	fs::create_directories(dir);
	std::ofstream(dir / "ingest.json") << out.dump(1) << '\n';
	std::cout << out.dump(1) << '\n';
	return 0;
}

int cmd_synth(const std::string &spec_arg, const fs::path &out_dir)
{
	fedids::SyntheticSpec spec;
	if (spec_arg != "default") {
		std::ifstream in(spec_arg);
		if (!in)
			throw fedids::IoError("cannot open synthetic spec '" + spec_arg + "'");
		try {
			spec = fedids::parse_synthetic(json::parse(in));
		} catch (const json::exception &e) {
			throw fedids::ParseError(spec_arg + ": " + e.what());
		}
	}
	const auto fleet = fedids::generate_synthetic_fleet(spec);
	fs::create_directories(out_dir);
	std::ofstream manifest(out_dir / "manifest.csv");
	manifest << "device_id,path,class\n";
	for (const auto &d : fleet) {
		std::vector<fedids::Sample> all;
		for (const auto &seg : d.segments)
			all.insert(all.end(), seg.begin(), seg.end());
		const auto file = d.device_id + ".csv";
		fedids::write_device_csv(out_dir / file, all, false);
		manifest << d.device_id << ',' << file << ",labeled\n";
	}
	std::cout << json{{"manifest", (out_dir / "manifest.csv").string()},
					  {"devices", fleet.size()},
					  {"spec", fedids::to_json(spec)}}
					 .dump(1)
			  << '\n';
	return 0;
}

fs::path bundle_dir(const std::string &name)
{
	auto dir = results_dir() / name;
	fs::create_directories(dir);
	return dir;
}

int cmd_run(const std::string &config, std::string name)
{
	const auto cfg = fedids::load_config(config);
	if (name.empty())
		name = cfg.name;
	const auto dir = bundle_dir(name);
	const auto bundle = fedids::run_experiment(cfg, {dir});
	fedids::write_bundle(dir / "bundle.json", bundle);
	std::ofstream(dir / "timings.json") << fedids::timings_json(bundle).dump(1) << '\n';
	auto out = summary_json(bundle);
	out["bundle"] = (dir / "bundle.json").string();
	std::cout << out.dump(1) << '\n';
	return 0;
}

std::vector<std::size_t> parse_f_list(const std::string &s)
{
	std::vector<std::size_t> out;
	std::size_t pos = 0;
	while (pos <= s.size()) {
		const auto comma = s.find(',', pos);
		const auto cell = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
		if (!cell.empty()) {
			std::size_t used = 0;
			unsigned long v = 0;
			try {
				v = std::stoul(cell, &used);
			} catch (const std::exception &) {
				used = 0;
			}
			if (used != cell.size())
				throw fedids::ConfigError("invalid f value '" + cell + "'");
			out.push_back(v);
		}
		if (comma == std::string::npos)
			break;
		pos = comma + 1;
	}
	return out;
}

int cmd_sweep(const std::string &config, const std::string &f_list, const std::vector<std::string> &attack_names,
			  const std::vector<std::string> &rule_names, std::string name)
{
	const auto cfg = fedids::load_config(config);
	std::vector<fedids::AttackKind> attacks = fedids::default_sweep_attacks();
	if (!attack_names.empty()) {
		attacks.clear();
		for (const auto &a : attack_names)
			attacks.push_back(fedids::parse_attack_kind(a));
	}
	std::vector<fedids::AggregationSpec> rules = fedids::default_sweep_rules();
	if (!rule_names.empty()) {
		rules.clear();
		for (const auto &r : rule_names)
			rules.push_back(fedids::parse_aggregation_name(r));
	}
	if (name.empty())
		name = cfg.name + "-sweep";
	const auto dir = bundle_dir(name);
	const auto bundle = fedids::attack_sweep(cfg, parse_f_list(f_list), attacks, rules, {dir});
	fedids::write_bundle(dir / "bundle.json", bundle);
	std::ofstream(dir / "timings.json") << fedids::timings_json(bundle).dump(1) << '\n';
	json rows = json::array();
	for (const auto &s : bundle.sweep)
		rows.push_back({{"attack", s.attack}, {"aggregation", s.aggregation}, {"f", s.f}, {"mean_f1", s.mean_f1},
						{"min_f1", s.min_f1}, {"max_f1", s.max_f1}});
	std::cout << json{{"bundle", (dir / "bundle.json").string()}, {"sweep", rows}}.dump(1) << '\n';
	return 0;
}

int cmd_report(const std::vector<std::string> &paths, const std::string &format, const std::string &out)
{
	const auto fmt = fedids::parse_report_format(format);
	std::vector<fedids::ResultBundle> bundles;
	for (const auto &p : paths)
		bundles.push_back(fedids::read_bundle(p));
	const fs::path dir = out.empty() ? results_dir() / "report" : fs::path(out);
	json written = json::array();
	for (const auto &p : fedids::write_report(bundles, fmt, dir))
		written.push_back(p.string());
	std::cout << json{{"written", written}}.dump(1) << '\n';
	return 0;
}

} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"Federated IoT intrusion detection simulator"};
	app.require_subcommand(1);

	std::string manifest;
	bool header = false;
	std::size_t features = fedids::kNumFeatures;
	auto *ingest = app.add_subcommand("ingest", "Load a device manifest and summarize it");
	ingest->add_option("manifest", manifest, "Manifest CSV (device_id,path,class)")->required();
	ingest->add_flag("--header", header, "Data files start with a header row");
	ingest->add_option("--features", features, "Feature columns per row");

	std::string spec = "default";
	std::string synth_out = "synthetic";
	auto *synth = app.add_subcommand("synth", "Generate a synthetic device fleet");
	synth->add_option("spec", spec, "Synthetic spec JSON, or 'default'");
	synth->add_option("--out", synth_out, "Output directory");

	std::string config, name;
	auto *run = app.add_subcommand("run", "Run an experiment");
	run->add_option("config", config, "Config file or built-in profile")->required();
	run->add_option("--name", name, "Bundle name (default: config name)");

	std::string f_list;
	std::vector<std::string> attack_names, rule_names;
	auto *sweep = app.add_subcommand("sweep", "Attack sweep over f, attacks and aggregation rules");
	sweep->add_option("config", config, "Config file or built-in profile")->required();
	sweep->add_option("--f", f_list, "Comma-separated malicious client counts")->required();
	sweep->add_option("--attacks", attack_names, "Attack kinds");
	sweep->add_option("--rules", rule_names, "Aggregation rules, e.g. AVG MED TM(1) TM(2)+2-Resampling");
	sweep->add_option("--name", name, "Bundle name");

	std::vector<std::string> bundles;
	std::string format = "md", report_out;
	auto *report = app.add_subcommand("report", "Render result bundles as tables");
	report->add_option("bundles", bundles, "Result bundle JSON files");
	report->add_option("--format", format, "md or csv");
	report->add_option("--out", report_out, "Output directory (default: <results>/report)");

	auto *profiles = app.add_subcommand("profiles", "List built-in profiles");

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp &e) {
		return app.exit(e);
	} catch (const CLI::ParseError &e) {
		return fail("usage_error", e.what(), 64);
	}

	try {
		if (*ingest)
			return cmd_ingest(manifest, header, features);
		if (*synth)
			return cmd_synth(spec, synth_out);
		if (*run)
			return cmd_run(config, name);
		if (*sweep)
			return cmd_sweep(config, f_list, attack_names, rule_names, name);
		if (*report)
			return cmd_report(bundles, format, report_out);
		if (*profiles) {
			for (const auto &[n, j] : fedids::builtin_profiles())
				std::cout << n << '\n';
			return 0;
		}
	} catch (const fedids::Error &e) {
		return fail(e.kind(), e.what(), 1);
	} catch (const std::exception &e) {
		return fail("internal_error", e.what(), 70);
	}
	return 0;
}
