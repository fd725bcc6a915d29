#include "lrrec/eval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lrrec/ae/autoencoder.hpp"
#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::eval {
namespace {

#include "stopwords.inc"

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void finish(AttentionGroup& g) {
  g.mean_pos = mean(g.pos);
  g.mean_neg = mean(g.neg);
}

}  // namespace

SlotShares slot_means(const rec::SlotWeights& alpha) {
  for (int r = 0; r < rec::kSlots; ++r) {
    const double sum = alpha.row(r).sum();
    if (!alpha.row(r).allFinite() || (alpha.row(r).array() < 0.0).any() || std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("attention row " + std::to_string(r) + " is not a distribution");
  }
  SlotShares out{};
  for (int s = 0; s < rec::kSlots; ++s)
    out[static_cast<std::size_t>(s)] = alpha.col(s).mean();
  return out;
}

AttentionSummary attention_summary(std::span<const rec::SlotWeights> alphas,
                                   std::span<const double> predictions, double threshold) {
  if (alphas.size() != predictions.size())
    throw ValidationError("attention and prediction counts differ");
  if (alphas.empty()) throw ValidationError("no attention records");
  AttentionSummary s;
  SlotShares total{};
  std::vector<double> all_pos, all_neg;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const SlotShares m = slot_means(alphas[i]);
    auto& group = predictions[i] >= threshold ? s.high : s.low;
    group.pos.push_back(m[rec::kPos]);
    group.neg.push_back(m[rec::kNeg]);
    all_pos.push_back(m[rec::kPos]);
    all_neg.push_back(m[rec::kNeg]);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += m[k];
  }
  finish(s.high);
  finish(s.low);
  s.mean_pos = mean(all_pos);
  s.mean_neg = mean(all_neg);
  double sum = 0.0;
  for (double t : total) sum += t;
  for (std::size_t k = 0; k < total.size(); ++k) s.slot_share[k] = total[k] / sum;
  return s;
}

std::vector<HistogramBin> attention_histogram(const AttentionGroup& group, double width) {
  if (!(width > 0.0) || width > 1.0) throw ValidationError("histogram width must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(1.0 / width - 1e-9));
  std::vector<HistogramBin> bins(n);
  for (std::size_t b = 0; b < n; ++b) {
    bins[b].lo = static_cast<double>(b) * width;
    bins[b].hi = std::min(1.0, static_cast<double>(b + 1) * width);
  }
  const auto index = [&](double v) {
    if (v < 0.0 || v > 1.0 || !std::isfinite(v)) throw ValidationError("attention value outside [0, 1]");
    return std::min(n - 1, static_cast<std::size_t>(v / width));
  };
  for (double v : group.pos) ++bins[index(v)].count_pos;
  for (double v : group.neg) ++bins[index(v)].count_neg;
  return bins;
}

void write_histogram_csv(const std::string& path, std::span<const HistogramBin> bins) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out << "bin_lo,bin_hi,count_pos,count_neg\n";
  for (const auto& b : bins)
    out << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count_pos << ',' << b.count_neg << '\n';
}

void write_share_csv(const std::string& path, const SlotShares& shares) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out << "slot,share\n";
  for (std::size_t k = 0; k < shares.size(); ++k) out << kSlotNames[k] << ',' << fmt(shares[k]) << '\n';
}

std::vector<double> min_max(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi == *lo) {
    log::warn("min-max normalization of constant values; all scores set to 0");
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / (*hi - *lo);
  return out;
}

Uncertainty uncertainty_scores(const std::vector<std::vector<double>>& predictions) {
  if (predictions.size() < 2) throw ValidationError("uncertainty needs at least two models");
  const std::size_t n = predictions.front().size();
  for (const auto& row : predictions)
    if (row.size() != n) throw ValidationError("models predicted different record counts");
  Uncertainty u;
  u.variance.resize(n);
  const auto k = static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (const auto& row : predictions) m += row[i];
    m /= k;
    double v = 0.0;
    for (const auto& row : predictions) v += (row[i] - m) * (row[i] - m);
    u.variance[i] = v / k;
  }
  u.normalized = min_max(u.variance);
  return u;
}

std::vector<WordCount> keyword_frequencies(std::span<const std::string> texts, std::size_t top_k,
                                           const std::set<std::string>& blocked) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : ae::tokenize(t))
      if (!blocked.count(w)) ++counts[w];
  std::vector<WordCount> out;
  out.reserve(counts.size());
  for (auto& [w, c] : counts) out.push_back({w, c});
  // map order is alphabetical, so a stable sort on count keeps ties sorted
  std::stable_sort(out.begin(), out.end(), [](const WordCount& a, const WordCount& b) { return a.count > b.count; });
  if (top_k > 0 && out.size() > top_k) out.resize(top_k);
  return out;
}

std::set<std::string> parse_word_list(const std::string& text) {
  std::set<std::string> words;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string w;
    while (fields >> w) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      words.insert(w);
    }
  }
  return words;
}

std::set<std::string> load_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("cannot read word list " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_word_list(ss.str());
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = parse_word_list(kStopwordText);
  return words;
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("regression inputs differ in length");
  if (x.size() < 3) throw ValidationError("regression needs at least three points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("regressor has zero variance; slope undefined");
  LinearFit f;
  f.n = x.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (syy > 0.0) f.r = sxy / std::sqrt(sxx * syy);
  return f;
}

LinearFit improvement_vs_uncertainty(std::span<const double> baseline_errors,
                                     std::span<const double> model_errors,
                                     std::span<const double> uncertainty) {
  if (baseline_errors.size() != model_errors.size())
    throw ValidationError("error vectors differ in length");
  std::vector<double> gain(baseline_errors.size());
  for (std::size_t i = 0; i < gain.size(); ++i) gain[i] = baseline_errors[i] - model_errors[i];
  return fit_line(uncertainty, gain);
}

}  // namespace lrrec::eval
