#pragma once

#include <cstddef>

#include "core.hpp"
#include "dataset.hpp"

namespace fedids {

struct Confusion {
	std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

	void add(int predicted, int actual)
	{
		if (actual == kAttack)
			(predicted == kAttack ? tp : fn) += 1;
		else
			(predicted == kAttack ? fp : tn) += 1;
	}

	Confusion &operator+=(const Confusion &o)
	{
		tp += o.tp;
		tn += o.tn;
		fp += o.fp;
		fn += o.fn;
		return *this;
	}

	std::size_t positives() const { return tp + fn; }
	std::size_t negatives() const { return tn + fp; }
	std::size_t total() const { return tp + tn + fp + fn; }
};

/// Rates with an empty denominator are reported as 0.
struct Metrics {
	double accuracy = 0.0;
	double tpr = 0.0;
	double tnr = 0.0;
	double f1 = 0.0;
	Confusion counts;
};

inline Metrics compute_metrics(const Confusion &c)
{
	if (c.total() == 0)
		throw EmptyPartError("metrics of an empty test set");
	auto ratio = [](std::size_t num, std::size_t den) {
		return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
	};
	Metrics m;
	m.counts = c;
	m.accuracy = ratio(c.tp + c.tn, c.total());
	m.tpr = ratio(c.tp, c.positives());
	m.tnr = ratio(c.tn, c.negatives());
	m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
	return m;
}

} // namespace fedids
