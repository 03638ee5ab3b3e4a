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

// Interaction logs, leave-one-out splits, head/tail cohorts and negative
// sampling.

#ifndef GRASP_DATASET_H_
#define GRASP_DATASET_H_

#include <cstddef>
#include <string>
#include <vector>

#include "grasp/common.h"

namespace grasp {

struct InteractionDataset {
  std::size_t user_count = 0;
  std::size_t item_count = 0;
  // sequences[u] is user u's items in timestamp order.
  std::vector<std::vector<ItemId>> sequences;
  std::vector<std::size_t> item_frequency;
  std::vector<std::size_t> user_frequency;
  // Raw identifiers indexed by dense id. Empty for synthetic corpora whose
  // raw ids are the dense ids themselves.
  std::vector<std::string> user_raw_ids;
  std::vector<std::string> item_raw_ids;

  std::size_t interaction_count() const;
  // Raw id of a dense id, falling back to the decimal dense id.
  std::string user_raw_id(UserId u) const;
  std::string item_raw_id(ItemId i) const;
};

// Recomputes frequencies from sequences and sets counts.
void finalize_frequencies(InteractionDataset& ds);

// Throws DataError describing the first violated invariant.
void validate(const InteractionDataset& ds);

struct LoadOptions {
  std::size_t min_user_len = 3;
  std::size_t min_item_freq = 3;
};

// Reads `user<TAB>item<TAB>timestamp` lines ('#' comments and blank lines
// skipped), filters sparse users and items to a fixpoint, and re-indexes the
// survivors densely. Dense ids follow ascending raw id order, numeric when
// every raw id is an unsigned integer and lexicographic otherwise.
InteractionDataset load_interactions(const std::string& path, const LoadOptions& opts = {});

// Writes the log format read by load_interactions, one event per line with
// timestamps equal to the position in the sequence.
void save_interactions(const InteractionDataset& ds, const std::string& path);

// Id maps as `raw_id<TAB>dense_id`.
void save_id_map(const std::vector<std::string>& raw_ids, std::size_t count,
                 const std::string& path);
std::vector<std::string> load_id_map(const std::string& path);

struct SplitEntry {
  UserId user = 0;
  std::vector<ItemId> train_prefix;
  ItemId valid_target = 0;
  ItemId test_target = 0;
};

struct LeaveOneOutSplit {
  std::vector<SplitEntry> entries;  // ascending user id
  std::size_t excluded_users = 0;   // sequences shorter than 3
};

LeaveOneOutSplit split_leave_one_out(const InteractionDataset& ds);

enum class Group : std::uint8_t { kHead, kTail };

struct GroupLabels {
  std::vector<Group> user_group;
  std::vector<Group> item_group;
  std::size_t user_threshold = 0;
  std::size_t item_threshold = 0;
};

// Frequency cutoff such that the head holds the top ceil(ratio * n) members
// plus everyone tied with the last of them.
std::size_t head_threshold(const std::vector<std::size_t>& frequencies, double ratio);

GroupLabels partition_head_tail(const InteractionDataset& ds, double ratio);

// `count` distinct items drawn uniformly without replacement from the items
// absent from the user's full sequence.
std::vector<ItemId> sample_negatives(const InteractionDataset& ds, UserId user,
                                     std::size_t count, Rng& rng);

}  // namespace grasp

#endif  // GRASP_DATASET_H_
