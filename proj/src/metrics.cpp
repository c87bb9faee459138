#include "pgnmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <unordered_map>

#include "pgnmt/errors.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

namespace {

// Packs an n-gram of ids into a byte-string map key.
std::string ngram_key(std::span<const Index> ids, std::size_t at, std::size_t n) {
  std::string key(n * sizeof(Index), '\0');
  std::memcpy(key.data(), ids.data() + at, n * sizeof(Index));
  return key;
}

void count_ngrams(std::span<const Index> ids, std::size_t n,
                  std::unordered_map<std::string, long long>& out) {
  if (ids.size() < n) return;
  for (std::size_t at = 0; at + n <= ids.size(); ++at) ++out[ngram_key(ids, at, n)];
}

}  // namespace

BleuReport sp_bleu(std::span<const std::vector<Index>> hypotheses,
                   std::span<const std::vector<Index>> references) {
  if (hypotheses.empty()) throw ContractError("sp_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw ContractError("sp_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " references");
  }

  BleuReport report;
  long long matched[4] = {0, 0, 0, 0};
  long long total[4] = {0, 0, 0, 0};
  std::unordered_map<std::string, long long> hyp_counts, ref_counts;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    report.hyp_len += static_cast<long long>(hyp.size());
    report.ref_len += static_cast<long long>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      if (hyp.size() < n) continue;
      total[n - 1] += static_cast<long long>(hyp.size() - n + 1);
      hyp_counts.clear();
      ref_counts.clear();
      count_ngrams(hyp, n, hyp_counts);
      count_ngrams(ref, n, ref_counts);
      for (const auto& [key, count] : hyp_counts) {
        const auto it = ref_counts.find(key);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (total[n] == 0) {
      p = 1.0;  // no hypothesis n-grams of this order exist anywhere
    } else if (matched[n] == 0) {
      p = 1.0 / (2.0 * static_cast<double>(total[n]));
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    }
    report.precisions[n] = p;
    log_sum += std::log(p);
  }

  report.brevity_penalty =
      report.hyp_len >= report.ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(report.ref_len) / static_cast<double>(report.hyp_len));
  if (report.hyp_len == 0) report.brevity_penalty = 0.0;
  report.score = 100.0 * report.brevity_penalty * std::exp(log_sum / 4.0);
  return report;
}

double attention_entropy(std::span<const double> a) {
  KahanSum sum;
  for (double x : a) {
    if (x < 0.0) {
      throw ContractError("attention_entropy: negative mass " + std::to_string(x));
    }
    sum.add(x);
  }
  if (std::abs(sum.value() - 1.0) > 1e-6) {
    throw ContractError("attention_entropy: mass sums to " + std::to_string(sum.value()) +
                        ", not 1");
  }
  KahanSum h;
  for (double x : a) {
    if (x > 0.0) h.add(-x * std::log(x));
  }
  // 0 ln 0 contributes nothing; clamp the tiny negative left by cancellation.
  return std::max(0.0, h.value());
}

double pcopy_entropy_correlation(std::span<const CopyUsageRecord> records) {
  const std::size_t n = records.size();
  if (n < 2) {
    throw ContractError("pcopy_entropy_correlation: needs at least 2 records, got " +
                        std::to_string(n));
  }
  KahanSum sx, sy;
  for (const auto& r : records) {
    sx.add(r.p_copy);
    sy.add(r.entropy);
  }
  const double mx = sx.value() / static_cast<double>(n);
  const double my = sy.value() / static_cast<double>(n);
  KahanSum sxx, syy, sxy;
  for (const auto& r : records) {
    const double dx = r.p_copy - mx;
    const double dy = r.entropy - my;
    sxx.add(dx * dx);
    syy.add(dy * dy);
    sxy.add(dx * dy);
  }
  if (sxx.value() <= 0.0 || syy.value() <= 0.0) {
    throw ContractError("pcopy_entropy_correlation: zero variance on an axis");
  }
  return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

namespace {

double median_of_sorted(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

CopyUsageSummary copy_usage_summary(std::span<const CopyUsageRecord> records,
                                    std::size_t top_k) {
  CopyUsageSummary out;
  std::vector<double> present, absent;
  std::map<Index, std::pair<double, long long>> by_token;  // id -> (sum, count)
  for (const auto& r : records) {
    (r.in_source ? present : absent).push_back(r.p_copy);
    auto& acc = by_token[r.token_id];
    acc.first += r.p_copy;
    acc.second += 1;
  }
  out.present_count = static_cast<long long>(present.size());
  out.absent_count = static_cast<long long>(absent.size());
  if (!present.empty()) {
    KahanSum s;
    for (double x : present) s.add(x);
    out.present_mean = s.value() / static_cast<double>(present.size());
    out.present_median = median_of_sorted(present);
  }
  if (!absent.empty()) {
    KahanSum s;
    for (double x : absent) s.add(x);
    out.absent_mean = s.value() / static_cast<double>(absent.size());
    out.absent_median = median_of_sorted(absent);
  }

  std::vector<TokenUsage> ranked;
  ranked.reserve(by_token.size());
  for (const auto& [id, acc] : by_token) {
    ranked.push_back({id, acc.first / static_cast<double>(acc.second), acc.second});
  }
  std::sort(ranked.begin(), ranked.end(), [](const TokenUsage& a, const TokenUsage& b) {
    if (a.mean_p_copy != b.mean_p_copy) return a.mean_p_copy > b.mean_p_copy;
    return a.token_id < b.token_id;
  });
  if (ranked.size() > top_k) ranked.resize(top_k);
  out.top_tokens = std::move(ranked);
  return out;
}

}  // namespace pgnmt
