// Copyright 2026 The SA-Adjust Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reports: per-effect mean Lab-L2 against the input baseline, preset-recovery
// accuracy on synthetic data, and variant comparison tables.

#pragma once

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saadjust/adjustmap.hpp"
#include "saadjust/colorspace.hpp"
#include "saadjust/data.hpp"
#include "saadjust/model.hpp"

namespace saadjust {

struct EffectScore {
  std::string effect;
  std::size_t images = 0;
  double prediction = 0;  // mean Lab-L2, prediction vs target
  double baseline = 0;    // mean Lab-L2, input vs target
};

struct EvalReport {
  std::string label;
  std::vector<EffectScore> effects;  // sorted by effect name

  const EffectScore& effect(const std::string& name) const {
    for (const auto& e : effects) {
      if (e.effect == name) return e;
    }
    throw std::out_of_range("report '" + label + "' has no effect '" + name + "'");
  }
};

/// Report from per-image predictions; images are averaged uniformly per effect.
inline EvalReport make_report(const std::string& label,
                              const std::vector<AdjustmentExample>& dataset,
                              const std::vector<LabImage>& predictions) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  if (predictions.size() != dataset.size()) {
    throw std::invalid_argument("evaluate: prediction count does not match dataset");
  }
  std::map<std::string, std::vector<std::pair<double, double>>> per_effect;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    per_effect[effect_name(dataset[i].effect)].push_back(
        {lab_l2_distance(predictions[i], dataset[i].target),
         lab_l2_distance(dataset[i].input, dataset[i].target)});
  }
  EvalReport report;
  report.label = label;
  for (auto& [name, vals] : per_effect) {
    // Sorted so the report does not depend on dataset order.
    std::sort(vals.begin(), vals.end());
    EffectScore s;
    s.effect = name;
    s.images = vals.size();
    for (const auto& [p, b] : vals) {
      s.prediction += p;
      s.baseline += b;
    }
    s.prediction /= static_cast<double>(vals.size());
    s.baseline /= static_cast<double>(vals.size());
    report.effects.push_back(s);
  }
  return report;
}

/// Dense inference over the dataset.
template <typename T>
EvalReport evaluate(const Model<T>& model, const std::vector<AdjustmentExample>& dataset,
                    InferenceMode mode = InferenceMode::Hard, std::string label = {}) {
  std::vector<LabImage> preds;
  preds.reserve(dataset.size());
  for (const auto& ex : dataset) preds.push_back(model.infer(ex.input, mode).output);
  return make_report(label.empty() ? model.config().variant.name() : label, dataset, preds);
}

inline constexpr int kMaxMapAccuracyK = 8;

/// Best per-pixel agreement over all relabelings of the prediction.
inline double map_accuracy(const AdjustmentMap& predicted, const IndexMap& truth, int K) {
  if (K < 1 || K > kMaxMapAccuracyK) {
    throw std::invalid_argument("map_accuracy: K=" + std::to_string(K) + " outside [1, " +
                                std::to_string(kMaxMapAccuracyK) + "]");
  }
  if (predicted.K != K) throw std::invalid_argument("map_accuracy: predicted map has different K");
  const auto& p = predicted.assignments;
  if (p.height != truth.height || p.width != truth.width) {
    throw std::invalid_argument("map_accuracy: shape mismatch");
  }
  if (p.data.empty()) throw std::invalid_argument("map_accuracy: empty map");
  // Confusion counts make each relabeling O(K).
  std::vector<std::size_t> conf(static_cast<std::size_t>(K) * K, 0);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    if (p.data[i] >= K || truth.data[i] >= K) {
      throw std::out_of_range("map_accuracy: label >= K at pixel " + std::to_string(i));
    }
    ++conf[p.data[i] * K + truth.data[i]];
  }
  std::vector<int> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t agree = 0;
    for (int k = 0; k < K; ++k) agree += conf[k * K + perm[k]];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(p.data.size());
}

// ---------------------------------------------------------------------------
// Tables

inline std::vector<std::string> table_effects(const std::vector<EvalReport>& reports) {
  std::vector<std::string> names;
  for (const auto& r : reports) {
    for (const auto& e : r.effects) {
      if (std::find(names.begin(), names.end(), e.effect) == names.end()) names.push_back(e.effect);
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline std::string fmt_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

/// Aligned text: an "input" baseline row (from the first report) then one row
/// per report in the given order.
inline std::string variant_table_text(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("variant_table: no reports");
  const auto effects = table_effects(reports);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"variant"});
  for (const auto& e : effects) rows[0].push_back(e);
  std::vector<std::string> base{"input"};
  for (const auto& e : effects) {
    std::string cell = "-";
    for (const auto& r : reports) {
      for (const auto& s : r.effects) {
        if (s.effect == e) {
          cell = fmt_score(s.baseline);
          break;
        }
      }
      if (cell != "-") break;
    }
    base.push_back(cell);
  }
  rows.push_back(base);
  for (const auto& r : reports) {
    std::vector<std::string> row{r.label};
    for (const auto& e : effects) {
      std::string cell = "-";
      for (const auto& s : r.effects) {
        if (s.effect == e) cell = fmt_score(s.prediction);
      }
      row.push_back(cell);
    }
    rows.push_back(row);
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  }
  return os.str();
}

/// CSV with columns variant,<effect>,...,<effect>_baseline,... Values use
/// round-trip precision.
inline std::string variant_table_csv(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("variant_table: no reports");
  const auto effects = table_effects(reports);
  std::ostringstream os;
  os << "variant";
  for (const auto& e : effects) os << ',' << e;
  for (const auto& e : effects) os << ',' << e << "_baseline";
  os << '\n';
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    os << r.label;
    for (const auto& e : effects) {
      os << ',';
      for (const auto& s : r.effects) {
        if (s.effect == e) os << num(s.prediction);
      }
    }
    for (const auto& e : effects) {
      os << ',';
      for (const auto& s : r.effects) {
        if (s.effect == e) os << num(s.baseline);
      }
    }
    os << '\n';
  }
  return os.str();
}

/// Parses variant_table_csv output. Image counts are not stored and come back 0.
inline std::vector<EvalReport> parse_variant_table_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    out.push_back(cur);
    return out;
  };
  if (!std::getline(in, line)) throw std::invalid_argument("variant table CSV: empty");
  const auto header = split(line);
  if (header.empty() || header[0] != "variant" || (header.size() - 1) % 2 != 0) {
    throw std::invalid_argument("variant table CSV: bad header");
  }
  const std::size_t E = (header.size() - 1) / 2;
  std::vector<EvalReport> reports;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw std::invalid_argument("variant table CSV: ragged row");
    EvalReport r;
    r.label = cells[0];
    for (std::size_t e = 0; e < E; ++e) {
      if (cells[1 + e].empty()) continue;
      EffectScore s;
      s.effect = header[1 + e];
      s.prediction = std::stod(cells[1 + e]);
      s.baseline = cells[1 + E + e].empty() ? 0.0 : std::stod(cells[1 + E + e]);
      r.effects.push_back(s);
    }
    reports.push_back(r);
  }
  return reports;
}

}  // namespace saadjust
