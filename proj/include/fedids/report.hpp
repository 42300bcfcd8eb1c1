#pragma once

// Markdown and CSV renderings of result bundles.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "harness.hpp"

namespace fedids {

enum class ReportFormat { markdown, csv };

inline ReportFormat parse_report_format(std::string_view s)
{
	if (s == "md" || s == "markdown")
		return ReportFormat::markdown;
	if (s == "csv")
		return ReportFormat::csv;
	throw ConfigError("unknown report format '" + std::string(s) + "' (expected md or csv)");
}

namespace detail {

inline std::string pct(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
	return buf;
}

inline std::string num(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.6g", v);
	return buf;
}

inline std::string balance_label(double bf)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.4g%% benign", 100.0 * bf);
	return buf;
}

} // namespace detail

/// Rows {Acc, TPR, TNR} x {known, new} grouped by benign balance, one column
/// per distinct bundle label. Attack sweeps have their own table.
inline std::string metrics_table(const std::vector<ResultBundle> &bundles)
{
	std::vector<std::string> columns;
	std::vector<double> balances;
	for (const auto &b : bundles) {
		if (b.rows.empty() || !b.sweep.empty())
			continue;
		if (std::find(columns.begin(), columns.end(), b.label) == columns.end())
			columns.push_back(b.label);
		if (std::find(balances.begin(), balances.end(), b.benign_fraction) == balances.end())
			balances.push_back(b.benign_fraction);
	}
	std::sort(balances.begin(), balances.end());

	std::ostringstream out;
	out << "| Balance | Metric | Devices |";
	for (const auto &c : columns)
		out << ' ' << c << " |";
	out << "\n|---|---|---|";
	for (std::size_t i = 0; i < columns.size(); ++i)
		out << "---|";
	out << '\n';

	const char *names[] = {"Acc", "TPR", "TNR"};
	for (double bf : balances) {
		for (int metric = 0; metric < 3; ++metric) {
			for (bool nd : {false, true}) {
				out << "| " << detail::balance_label(bf) << " | " << names[metric] << " | " << (nd ? "new" : "known")
					<< " |";
				for (const auto &c : columns) {
					const ResultBundle *hit = nullptr;
					for (const auto &b : bundles)
						if (b.label == c && b.benign_fraction == bf && !b.rows.empty() && b.sweep.empty())
							hit = &b;
					if (!hit) {
						out << " - |";
						continue;
					}
					const auto s = summarize(hit->rows, nd);
					if (s.runs == 0) {
						out << " - |";
						continue;
					}
					const double v = metric == 0 ? s.accuracy : metric == 1 ? s.tpr : s.tnr;
					out << ' ' << detail::pct(v) << " |";
				}
				out << '\n';
			}
		}
	}
	return out.str();
}

/// One row per bundle that carries a cost estimate.
inline std::string cost_table(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "| Setting | Algorithm | Transmissions | Local steps | Model size | Communication |\n"
		<< "|---|---|---|---|---|---|\n";
	for (const auto &b : bundles) {
		if (!b.cost)
			continue;
		out << "| " << b.mode << ' ' << detail::balance_label(b.benign_fraction) << " | " << b.label << " | "
			<< b.cost->transmissions << " | " << b.cost->local_steps << " | " << format_bytes(b.cost->model_bytes)
			<< " | " << format_bytes(b.cost->communication_bytes()) << " |\n";
	}
	return out.str();
}

inline std::string sweep_table(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "| Attack | Aggregation | f | Runs | Mean F1 | Min F1 | Max F1 |\n|---|---|---|---|---|---|---|\n";
	for (const auto &b : bundles)
		for (const auto &s : b.sweep)
			out << "| " << s.attack << " | " << s.aggregation << " | " << s.f << " | " << s.runs << " | "
				<< detail::pct(s.mean_f1) << " | " << detail::pct(s.min_f1) << " | " << detail::pct(s.max_f1) << " |\n";
	return out.str();
}

inline std::string markdown_report(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "# Results\n\n## Detection\n\n" << metrics_table(bundles) << "\n## Cost\n\n" << cost_table(bundles);
	bool any_sweep = std::any_of(bundles.begin(), bundles.end(), [](const auto &b) { return !b.sweep.empty(); });
	if (any_sweep)
		out << "\n## Attack sweep\n\n" << sweep_table(bundles);
	return out.str();
}

inline std::string results_csv(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "label,mode,benign_fraction,fold,repetition,seed,held_out,status,attack,aggregation,f,scope,accuracy,tpr,"
		   "tnr,f1,threshold,transmissions,local_steps\n";
	for (const auto &b : bundles)
		for (const auto &r : b.rows)
			for (bool nd : {false, true}) {
				if (nd && !r.new_device)
					continue;
				const auto &m = nd ? *r.new_device : r.known;
				out << b.label << ',' << b.mode << ',' << detail::num(b.benign_fraction) << ',' << r.fold << ','
					<< r.repetition << ',' << r.seed << ',' << r.held_out << ',' << r.status << ',' << r.attack << ','
					<< r.aggregation << ',' << r.f << ',' << (nd ? "new" : "known") << ',' << detail::num(m.accuracy)
					<< ',' << detail::num(m.tpr) << ',' << detail::num(m.tnr) << ',' << detail::num(m.f1) << ','
					<< (r.threshold ? detail::num(*r.threshold) : "") << ',' << r.transmissions << ','
					<< r.local_steps << '\n';
			}
	return out.str();
}

/// Learning curves: mean, min and max over cells per (label, aggregation).
inline std::string curves_csv(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "label,aggregation,round,epoch,scope,metric,mean,min,max,runs\n";
	for (const auto &b : bundles) {
		std::map<std::size_t, std::vector<const CurvePoint *>> by_x;
		for (const auto &p : b.curves)
			by_x[p.aggregation].push_back(&p);
		for (const auto &[x, points] : by_x) {
			for (bool nd : {false, true}) {
				for (int metric = 0; metric < 4; ++metric) {
					double sum = 0, lo = 0, hi = 0;
					std::size_t n = 0;
					for (const auto *p : points) {
						const auto &m = nd ? p->new_device : p->known;
						if (!m)
							continue;
						const double v = metric == 0 ? m->accuracy : metric == 1 ? m->tpr : metric == 2 ? m->tnr : m->f1;
						lo = n == 0 ? v : std::min(lo, v);
						hi = n == 0 ? v : std::max(hi, v);
						sum += v;
						++n;
					}
					if (n == 0)
						continue;
					const char *names[] = {"accuracy", "tpr", "tnr", "f1"};
					out << b.label << ',' << x << ',' << points.front()->round << ','
						<< detail::num(points.front()->epoch) << ',' << (nd ? "new" : "known") << ',' << names[metric]
						<< ',' << detail::num(sum / static_cast<double>(n)) << ',' << detail::num(lo) << ','
						<< detail::num(hi) << ',' << n << '\n';
				}
			}
		}
	}
	return out.str();
}

inline std::string sweep_csv(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "attack,aggregation,f,runs,failed,mean_f1,min_f1,max_f1,mean_accuracy,mean_tpr,mean_tnr\n";
	for (const auto &b : bundles)
		for (const auto &s : b.sweep)
			out << s.attack << ',' << s.aggregation << ',' << s.f << ',' << s.runs << ',' << s.failed << ','
				<< detail::num(s.mean_f1) << ',' << detail::num(s.min_f1) << ',' << detail::num(s.max_f1) << ','
				<< detail::num(s.mean_accuracy) << ',' << detail::num(s.mean_tpr) << ',' << detail::num(s.mean_tnr)
				<< '\n';
	return out.str();
}

inline std::string cost_csv(const std::vector<ResultBundle> &bundles)
{
	std::ostringstream out;
	out << "label,mode,benign_fraction,transmissions,local_steps,model_bytes,communication_bytes\n";
	for (const auto &b : bundles)
		if (b.cost)
			out << b.label << ',' << b.mode << ',' << detail::num(b.benign_fraction) << ',' << b.cost->transmissions
				<< ',' << b.cost->local_steps << ',' << detail::num(b.cost->model_bytes) << ','
				<< detail::num(b.cost->communication_bytes()) << '\n';
	return out.str();
}

/// Write the report files into `dir` and return their paths.
inline std::vector<std::filesystem::path> write_report(const std::vector<ResultBundle> &bundles, ReportFormat format,
													   const std::filesystem::path &dir)
{
	std::filesystem::create_directories(dir);
	std::vector<std::pair<std::string, std::string>> files;
	if (format == ReportFormat::markdown) {
		files.emplace_back("report.md", markdown_report(bundles));
	} else {
		files.emplace_back("results.csv", results_csv(bundles));
		files.emplace_back("curves.csv", curves_csv(bundles));
		files.emplace_back("sweep.csv", sweep_csv(bundles));
		files.emplace_back("cost.csv", cost_csv(bundles));
	}
	std::vector<std::filesystem::path> written;
	for (const auto &[name, text] : files) {
		const auto path = dir / name;
		std::ofstream out(path);
		if (!out)
			throw IoError("cannot write '" + path.string() + "'");
		out << text;
		written.push_back(path);
	}
	return written;
}

} // namespace fedids
