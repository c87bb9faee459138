#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pgnmt/tensor.hpp"

namespace pgnmt {

struct BleuReport {
  double score = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  long long hyp_len = 0;
  long long ref_len = 0;
};

// Corpus-level BLEU-4 over subword ids: clipped n-gram counts summed over the
// corpus; a zero numerator at order n is smoothed to 1/(2 * total hypothesis
// n-gram count); an order with no hypothesis n-grams at all contributes a
// neutral precision of 1 (this keeps identical corpora at exactly 100 even
// when every sentence is shorter than 4 tokens); BP = min(1, e^(1 - ref/hyp)).
BleuReport sp_bleu(std::span<const std::vector<Index>> hypotheses,
                   std::span<const std::vector<Index>> references);

// Shannon entropy -sum a_i ln a_i with 0 ln 0 := 0. Input must be a
// distribution: entries >= 0 summing to 1 within 1e-6.
double attention_entropy(std::span<const double> a);

struct CopyUsageRecord {
  Index token_id = 0;
  double p_copy = 0.0;
  double entropy = 0.0;   // cross-attention entropy at this step
  bool in_source = false; // token id occurs in the paired source
  Index sentence_id = 0;
  std::int64_t checkpoint_step = 0;
};

// Pearson correlation between p_copy and entropy over the records.
double pcopy_entropy_correlation(std::span<const CopyUsageRecord> records);

struct TokenUsage {
  Index token_id = 0;
  double mean_p_copy = 0.0;
  long long count = 0;
};

struct CopyUsageSummary {
  long long present_count = 0;
  double present_mean = 0.0;
  double present_median = 0.0;
  long long absent_count = 0;
  double absent_mean = 0.0;
  double absent_median = 0.0;
  // Tokens ranked by mean p_copy descending, ties by id ascending.
  std::vector<TokenUsage> top_tokens;
};

// Mean/median p_copy split by the in-source flag (an empty group reports
// count 0 and zeroed stats) plus the top-k tokens by mean p_copy.
CopyUsageSummary copy_usage_summary(std::span<const CopyUsageRecord> records,
                                    std::size_t top_k = 10);

}  // namespace pgnmt
