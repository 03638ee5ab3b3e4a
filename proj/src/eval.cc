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

#include "grasp/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grasp/parallel.h"

namespace grasp {

namespace {

std::size_t cutoff_slot(std::size_t k) {
  for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
    if (kCutoffs[i] == k) return i;
  }
  throw ArgumentError("unsupported cutoff k=" + std::to_string(k));
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::size_t rank_of_target(std::span<const double> scores, std::size_t target_index) {
  if (target_index >= scores.size()) throw ArgumentError("target index out of range");
  const double t = scores[target_index];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > t || (scores[j] == t && j < target_index)) ++rank;
  }
  return rank;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw ArgumentError("rank and k must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double hr_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw ArgumentError("rank and k must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

double MetricReport::ndcg_at(std::size_t k) const { return ndcg[cutoff_slot(k)]; }
double MetricReport::hr_at(std::size_t k) const { return hr[cutoff_slot(k)]; }

MetricReport aggregate(std::span<const UserRecord> records, std::string group) {
  MetricReport r;
  r.group = std::move(group);
  r.n_users = records.size();
  if (records.empty()) return r;
  for (const auto& rec : records) {
    for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
      r.ndcg[i] += ndcg_at_k(rec.rank, kCutoffs[i]);
      r.hr[i] += hr_at_k(rec.rank, kCutoffs[i]);
    }
  }
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
    r.ndcg[i] /= n;
    r.hr[i] /= n;
  }
  return r;
}

std::string to_string(SplitPart part) { return part == SplitPart::kValid ? "valid" : "test"; }

SplitPart parse_split_part(const std::string& name) {
  if (name == "valid") return SplitPart::kValid;
  if (name == "test") return SplitPart::kTest;
  throw ArgumentError("unknown split '" + name + "' (expected valid or test)");
}

EvalPlan make_eval_plan(const LeaveOneOutSplit& split, const InteractionDataset& ds,
                        SplitPart part, std::size_t eval_negatives, std::uint64_t seed) {
  EvalPlan plan;
  plan.part = part;
  const std::uint64_t stream = part == SplitPart::kValid ? 11 : 12;
  for (const SplitEntry& e : split.entries) {
    Rng rng(derive_seed(seed, stream, e.user));
    EvalCase c;
    c.user = e.user;
    c.history = e.train_prefix;
    if (part == SplitPart::kValid) {
      c.target = e.valid_target;
    } else {
      c.history.push_back(e.valid_target);
      c.target = e.test_target;
    }
    try {
      c.candidates = sample_negatives(ds, e.user, eval_negatives, rng);
    } catch (const DataError&) {
      ++plan.skipped;
      continue;
    }
    c.candidates.insert(c.candidates.begin(), c.target);
    // Shuffle so the target's position (and hence its tie order) is uniform.
    for (std::size_t i = c.candidates.size(); i > 1; --i) {
      std::swap(c.candidates[i - 1], c.candidates[uniform_index(rng, i)]);
    }
    c.target_index = static_cast<std::size_t>(
        std::find(c.candidates.begin(), c.candidates.end(), c.target) - c.candidates.begin());
    plan.cases.push_back(std::move(c));
  }
  return plan;
}

EvalResult evaluate_plan(const CandidateScorer& scorer, const EvalPlan& plan) {
  EvalResult result;
  result.skipped = plan.skipped;
  result.records.resize(plan.cases.size());
  parallel_for(plan.cases.size(), [&](std::size_t i) {
    const EvalCase& c = plan.cases[i];
    const std::vector<double> scores = scorer(c.user, c.history, c.candidates);
    if (scores.size() != c.candidates.size()) {
      throw ArgumentError("scorer returned " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(c.candidates.size()) + " candidates");
    }
    result.records[i] = {c.user, c.target, rank_of_target(scores, c.target_index)};
  });
  result.overall = aggregate(result.records, "overall");
  return result;
}

EvalResult evaluate(const CandidateScorer& scorer, const LeaveOneOutSplit& split,
                    const InteractionDataset& ds, SplitPart part, std::size_t eval_negatives,
                    std::uint64_t seed) {
  return evaluate_plan(scorer, make_eval_plan(split, ds, part, eval_negatives, seed));
}

std::vector<MetricReport> group_report(std::span<const UserRecord> records,
                                       const GroupLabels& groups) {
  std::vector<UserRecord> head_user, tail_user, head_item, tail_item;
  for (const auto& r : records) {
    if (r.user >= groups.user_group.size() || r.target >= groups.item_group.size()) {
      throw ArgumentError("group labels do not cover user " + std::to_string(r.user) +
                          " / item " + std::to_string(r.target));
    }
    (groups.user_group[r.user] == Group::kHead ? head_user : tail_user).push_back(r);
    (groups.item_group[r.target] == Group::kHead ? head_item : tail_item).push_back(r);
  }
  return {aggregate(head_user, "head_user"), aggregate(tail_user, "tail_user"),
          aggregate(head_item, "head_item"), aggregate(tail_item, "tail_item")};
}

std::string format_metrics_tsv(std::span<const MetricReport> reports) {
  std::ostringstream out;
  out << "group\tk\tndcg\thr\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
      out << r.group << '\t' << kCutoffs[i] << '\t';
      if (r.empty()) {
        out << "NA\tNA\n";
      } else {
        out << exact(r.ndcg[i]) << '\t' << exact(r.hr[i]) << '\n';
      }
    }
  }
  return out.str();
}

std::string format_metrics_table(std::span<const MetricReport> reports, bool with_counts) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-10s %7s", "Group", "Users");
  out << buf;
  for (std::size_t k : kCutoffs) {
    std::snprintf(buf, sizeof(buf), " %6s", ("N@" + std::to_string(k)).c_str());
    out << buf;
  }
  for (std::size_t k : kCutoffs) {
    std::snprintf(buf, sizeof(buf), " %6s", ("H@" + std::to_string(k)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& r : reports) {
    if (with_counts) {
      std::snprintf(buf, sizeof(buf), "%-10s %7zu", r.group.c_str(), r.n_users);
    } else {
      std::snprintf(buf, sizeof(buf), "%-10s %7s", r.group.c_str(), "-");
    }
    out << buf;
    for (const auto* values : {&r.ndcg, &r.hr}) {
      for (double v : *values) {
        if (r.empty()) {
          std::snprintf(buf, sizeof(buf), " %6s", "empty");
        } else {
          std::snprintf(buf, sizeof(buf), " %6.2f", 100.0 * v);
        }
        out << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

void emit_report(std::span<const MetricReport> reports, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  for (const auto& [name, text] : {std::pair{std::string("metrics.tsv"), format_metrics_tsv(reports)},
                                   std::pair{std::string("metrics.txt"), format_metrics_table(reports)}}) {
    const std::string path = dir + "/" + name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
  }
}

std::vector<MetricReport> parse_metrics_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file: " + path);
  std::vector<MetricReport> reports;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "group\tk\tndcg\thr") throw FormatError(path + ":1: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string group, k_text, ndcg_text, hr_text, extra;
    if (!std::getline(fields, group, '\t') || !std::getline(fields, k_text, '\t') ||
        !std::getline(fields, ndcg_text, '\t') || !std::getline(fields, hr_text, '\t') ||
        std::getline(fields, extra, '\t')) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected four columns");
    }
    std::size_t slot = 0;
    try {
      slot = cutoff_slot(std::stoul(k_text));
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad cutoff '" + k_text + "'");
    }
    if (reports.empty() || reports.back().group != group) {
      reports.emplace_back();
      reports.back().group = group;
    }
    MetricReport& r = reports.back();
    if (ndcg_text == "NA") {
      r.n_users = 0;
      continue;
    }
    try {
      r.ndcg[slot] = std::stod(ndcg_text);
      r.hr[slot] = std::stod(hr_text);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad metric value");
    }
    r.n_users = 1;
  }
  return reports;
}

}  // namespace grasp
