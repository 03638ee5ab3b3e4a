/*
 * Copyright 2026 The GRASP Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Ranking metrics under the sampled leave-one-out protocol: each held-out
// target is ranked against a fixed set of sampled negatives.

#ifndef GRASP_EVAL_H_
#define GRASP_EVAL_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grasp/common.h"
#include "grasp/dataset.h"

namespace grasp {

inline constexpr std::array<std::size_t, 5> kCutoffs = {1, 3, 5, 10, 20};

// 1 + #(strictly greater) + #(tied with a smaller index).
std::size_t rank_of_target(std::span<const double> scores, std::size_t target_index);

// 1/log2(rank+1) if rank <= k, else 0.
double ndcg_at_k(std::size_t rank, std::size_t k);
double hr_at_k(std::size_t rank, std::size_t k);

struct MetricReport {
  std::string group = "overall";
  std::size_t n_users = 0;
  std::array<double, kCutoffs.size()> ndcg{};
  std::array<double, kCutoffs.size()> hr{};

  bool empty() const { return n_users == 0; }
  // k must be one of kCutoffs.
  double ndcg_at(std::size_t k) const;
  double hr_at(std::size_t k) const;
};

struct UserRecord {
  UserId user = 0;
  ItemId target = 0;
  std::size_t rank = 0;
};

// Averages the metrics of `records`. An empty list gives an empty report.
MetricReport aggregate(std::span<const UserRecord> records, std::string group);

enum class SplitPart { kValid, kTest };

std::string to_string(SplitPart part);
SplitPart parse_split_part(const std::string& name);

struct EvalCase {
  UserId user = 0;
  std::vector<ItemId> history;     // items preceding the target
  ItemId target = 0;
  std::vector<ItemId> candidates;  // target plus negatives, shuffled
  std::size_t target_index = 0;
};

struct EvalPlan {
  SplitPart part = SplitPart::kTest;
  std::vector<EvalCase> cases;  // ascending user id
  std::size_t skipped = 0;      // users without enough candidate items
};

// Negatives come from the items outside each user's full sequence and are
// reproducible from (seed, part, user) alone.
EvalPlan make_eval_plan(const LeaveOneOutSplit& split, const InteractionDataset& ds,
                        SplitPart part, std::size_t eval_negatives, std::uint64_t seed);

// Scores candidates for a user given their history; larger is better.
using CandidateScorer = std::function<std::vector<double>(
    UserId user, std::span<const ItemId> history, std::span<const ItemId> candidates)>;

struct EvalResult {
  MetricReport overall;
  std::vector<UserRecord> records;  // ascending user id
  std::size_t skipped = 0;
};

// Users are scored in parallel; aggregation follows user order.
EvalResult evaluate_plan(const CandidateScorer& scorer, const EvalPlan& plan);

EvalResult evaluate(const CandidateScorer& scorer, const LeaveOneOutSplit& split,
                    const InteractionDataset& ds, SplitPart part, std::size_t eval_negatives,
                    std::uint64_t seed);

// head_user, tail_user, head_item, tail_item. Item groups follow the
// target item's label.
std::vector<MetricReport> group_report(std::span<const UserRecord> records,
                                       const GroupLabels& groups);

// Writes <dir>/metrics.tsv (`group<TAB>k<TAB>ndcg<TAB>hr`, "NA" for empty
// groups) and <dir>/metrics.txt (percent table, one row per group).
void emit_report(std::span<const MetricReport> reports, const std::string& dir);
std::string format_metrics_tsv(std::span<const MetricReport> reports);
// with_counts off prints "-" for the user column (counts unknown after parsing).
std::string format_metrics_table(std::span<const MetricReport> reports, bool with_counts = true);
// Parses a metrics TSV. Group row counts are not stored, so n_users is 1 for
// non-empty groups and 0 for NA rows.
std::vector<MetricReport> parse_metrics_tsv(const std::string& path);

}  // namespace grasp

#endif  // GRASP_EVAL_H_
