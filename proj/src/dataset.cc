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

#include "grasp/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace grasp {

std::size_t InteractionDataset::interaction_count() const {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  return total;
}

std::string InteractionDataset::user_raw_id(UserId u) const {
  return u < user_raw_ids.size() ? user_raw_ids[u] : std::to_string(u);
}

std::string InteractionDataset::item_raw_id(ItemId i) const {
  return i < item_raw_ids.size() ? item_raw_ids[i] : std::to_string(i);
}

void finalize_frequencies(InteractionDataset& ds) {
  ds.user_count = ds.sequences.size();
  ds.user_frequency.assign(ds.user_count, 0);
  ds.item_frequency.assign(ds.item_count, 0);
  for (std::size_t u = 0; u < ds.user_count; ++u) {
    ds.user_frequency[u] = ds.sequences[u].size();
    for (ItemId i : ds.sequences[u]) {
      if (i >= ds.item_count) {
        throw DataError("item id " + std::to_string(i) + " out of range for user " +
                        std::to_string(u));
      }
      ++ds.item_frequency[i];
    }
  }
}

void validate(const InteractionDataset& ds) {
  if (ds.sequences.size() != ds.user_count) throw DataError("user_count mismatch");
  if (ds.user_frequency.size() != ds.user_count || ds.item_frequency.size() != ds.item_count) {
    throw DataError("frequency table size mismatch");
  }
  std::vector<std::size_t> items(ds.item_count, 0);
  std::size_t users_total = 0;
  for (std::size_t u = 0; u < ds.user_count; ++u) {
    if (ds.user_frequency[u] != ds.sequences[u].size()) {
      throw DataError("user_frequency mismatch for user " + std::to_string(u));
    }
    users_total += ds.sequences[u].size();
    for (ItemId i : ds.sequences[u]) {
      if (i >= ds.item_count) throw DataError("item id out of range");
      ++items[i];
    }
  }
  if (items != ds.item_frequency) throw DataError("item_frequency mismatch");
  const std::size_t items_total =
      std::accumulate(items.begin(), items.end(), std::size_t{0});
  if (users_total != items_total) throw DataError("frequency totals disagree");
}

namespace {

struct RawEvent {
  std::string user;
  std::string item;
  std::int64_t timestamp;
  std::size_t line;
};

bool all_unsigned_integers(const std::vector<std::string>& ids) {
  return std::all_of(ids.begin(), ids.end(), [](const std::string& s) {
    if (s.empty() || s.size() > 19) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  });
}

// Sorts raw ids into dense order and returns the raw -> dense map.
std::unordered_map<std::string, std::uint32_t> assign_dense(std::vector<std::string>& ids) {
  if (all_unsigned_integers(ids)) {
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      return std::stoull(a) < std::stoull(b);
    });
  } else {
    std::sort(ids.begin(), ids.end());
  }
  std::unordered_map<std::string, std::uint32_t> dense;
  for (std::size_t i = 0; i < ids.size(); ++i) dense.emplace(ids[i], static_cast<std::uint32_t>(i));
  return dense;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

InteractionDataset load_interactions(const std::string& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interaction log: " + path);

  std::vector<RawEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty() || view.front() == '#') continue;
    const auto t1 = view.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : view.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || view.find('\t', t2 + 1) != std::string_view::npos) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected user<TAB>item<TAB>timestamp");
    }
    RawEvent ev{std::string(view.substr(0, t1)), std::string(view.substr(t1 + 1, t2 - t1 - 1)),
                0, line_no};
    const std::string_view ts = view.substr(t2 + 1);
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), ev.timestamp);
    if (ev.user.empty() || ev.item.empty() || ec != std::errc() || ptr != ts.data() + ts.size()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": malformed event");
    }
    events.push_back(std::move(ev));
  }

  // Per-user event lists in file order; the stable sort below keeps file
  // order among equal timestamps.
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t e = 0; e < events.size(); ++e) by_user[events[e].user].push_back(e);
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return events[a].timestamp < events[b].timestamp;
    });
  }

  // Iterative filtering to a fixpoint.
  std::vector<bool> alive(events.size(), true);
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string, std::size_t> item_freq;
    for (std::size_t e = 0; e < events.size(); ++e) {
      if (alive[e]) ++item_freq[events[e].item];
    }
    for (std::size_t e = 0; e < events.size(); ++e) {
      if (alive[e] && item_freq[events[e].item] < opts.min_item_freq) {
        alive[e] = false;
        changed = true;
      }
    }
    for (const auto& [user, idx] : by_user) {
      const auto len = static_cast<std::size_t>(
          std::count_if(idx.begin(), idx.end(), [&](std::size_t e) { return alive[e]; }));
      if (len > 0 && len < opts.min_user_len) {
        for (std::size_t e : idx) alive[e] = false;
        changed = true;
      }
    }
  }

  std::vector<std::string> users, items;
  {
    std::unordered_map<std::string, bool> seen_items;
    for (const auto& [user, idx] : by_user) {
      bool any = false;
      for (std::size_t e : idx) {
        if (!alive[e]) continue;
        any = true;
        if (seen_items.emplace(events[e].item, true).second) items.push_back(events[e].item);
      }
      if (any) users.push_back(user);
    }
  }
  if (users.empty()) throw DataError(path + ": dataset is empty after filtering");

  const auto user_dense = assign_dense(users);
  const auto item_dense = assign_dense(items);

  InteractionDataset ds;
  ds.item_count = items.size();
  ds.sequences.resize(users.size());
  for (const auto& [user, idx] : by_user) {
    const auto it = user_dense.find(user);
    if (it == user_dense.end()) continue;
    auto& seq = ds.sequences[it->second];
    for (std::size_t e : idx) {
      if (alive[e]) seq.push_back(item_dense.at(events[e].item));
    }
  }
  ds.user_raw_ids = std::move(users);
  ds.item_raw_ids = std::move(items);
  finalize_frequencies(ds);
  return ds;
}

void save_interactions(const InteractionDataset& ds, const std::string& path) {
  std::ostringstream out;
  for (UserId u = 0; u < ds.user_count; ++u) {
    const auto& seq = ds.sequences[u];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      out << ds.user_raw_id(u) << '\t' << ds.item_raw_id(seq[t]) << '\t' << t << '\n';
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << out.str();
  if (!f) throw IoError("write failed: " + path);
}

void save_id_map(const std::vector<std::string>& raw_ids, std::size_t count,
                 const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < count; ++i) {
    f << (i < raw_ids.size() ? raw_ids[i] : std::to_string(i)) << '\t' << i << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<std::string> load_id_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open id map: " + path);
  std::vector<std::string> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    const auto tab = view.find('\t');
    std::size_t dense = 0;
    const std::string_view num = tab == std::string_view::npos ? "" : view.substr(tab + 1);
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), dense);
    if (tab == std::string_view::npos || ec != std::errc() || ptr != num.data() + num.size()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected raw_id<TAB>dense_id");
    }
    if (dense >= raw.size()) raw.resize(dense + 1);
    raw[dense] = std::string(view.substr(0, tab));
  }
  return raw;
}

LeaveOneOutSplit split_leave_one_out(const InteractionDataset& ds) {
  LeaveOneOutSplit split;
  for (UserId u = 0; u < ds.user_count; ++u) {
    const auto& seq = ds.sequences[u];
    if (seq.size() < 3) {
      ++split.excluded_users;
      continue;
    }
    SplitEntry entry;
    entry.user = u;
    entry.train_prefix.assign(seq.begin(), seq.end() - 2);
    entry.valid_target = seq[seq.size() - 2];
    entry.test_target = seq.back();
    split.entries.push_back(std::move(entry));
  }
  return split;
}

std::size_t head_threshold(const std::vector<std::size_t>& frequencies, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("head ratio must lie in (0, 1)");
  if (frequencies.empty()) throw DataError("cannot partition an empty population");
  std::vector<std::size_t> sorted = frequencies;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // The epsilon absorbs representation error such as 0.2 * 10 = 2.0000000000000004.
  auto head = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(sorted.size()) - 1e-9));
  head = std::clamp<std::size_t>(head, 1, sorted.size());
  return sorted[head - 1];
}

GroupLabels partition_head_tail(const InteractionDataset& ds, double ratio) {
  GroupLabels labels;
  labels.user_threshold = head_threshold(ds.user_frequency, ratio);
  labels.item_threshold = head_threshold(ds.item_frequency, ratio);
  labels.user_group.resize(ds.user_count);
  labels.item_group.resize(ds.item_count);
  for (std::size_t u = 0; u < ds.user_count; ++u) {
    labels.user_group[u] =
        ds.user_frequency[u] >= labels.user_threshold ? Group::kHead : Group::kTail;
  }
  for (std::size_t i = 0; i < ds.item_count; ++i) {
    labels.item_group[i] =
        ds.item_frequency[i] >= labels.item_threshold ? Group::kHead : Group::kTail;
  }
  return labels;
}

std::vector<ItemId> sample_negatives(const InteractionDataset& ds, UserId user,
                                     std::size_t count, Rng& rng) {
  if (user >= ds.user_count) throw ArgumentError("user id out of range");
  std::vector<bool> seen(ds.item_count, false);
  for (ItemId i : ds.sequences[user]) seen[i] = true;
  std::vector<ItemId> pool;
  pool.reserve(ds.item_count);
  for (ItemId i = 0; i < ds.item_count; ++i) {
    if (!seen[i]) pool.push_back(i);
  }
  if (count > pool.size()) {
    throw DataError("sampling infeasible: user " + std::to_string(user) + " has " +
                    std::to_string(pool.size()) + " candidate items, " + std::to_string(count) +
                    " requested");
  }
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = k + uniform_index(rng, pool.size() - k);
    std::swap(pool[k], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace grasp
