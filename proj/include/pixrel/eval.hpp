#pragma once

// Mask IoU, instance average precision at mask-IoU thresholds, and semantic mIoU.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/propagation.hpp"

namespace pixrel {

using PixelSet = std::vector<std::uint32_t>;  // sorted flat indices

inline double mask_iou(const PixelSet& a, const PixelSet& b) {
  if (a.empty() && b.empty()) throw InputError("mask IoU of two empty masks is undefined");
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct ScoredInstance {
  int cls = 0;
  PixelSet mask;
  double score = 0.0;
};

struct GtInstance {
  int cls = 0;
  PixelSet mask;
};

// Instance masks of a label image, one per nonzero instance id (ascending).
inline std::map<std::int32_t, std::pair<int, PixelSet>> label_instances(const LabelImage& l) {
  std::map<std::int32_t, std::pair<int, PixelSet>> out;
  for (std::size_t i = 0; i < l.instance_plane.size(); ++i) {
    const auto k = l.instance_plane[i];
    if (k == 0) continue;
    auto& entry = out[k];
    entry.first = l.class_plane[i];
    entry.second.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

inline std::vector<GtInstance> gt_instances(const LabelImage& l) {
  std::vector<GtInstance> out;
  for (auto& [k, entry] : label_instances(l)) out.push_back({entry.first, std::move(entry.second)});
  return out;
}

// Each labeled instance id refers to channel id - 1 of the propagated stack; its
// score is the maximum of that channel over the mask.
inline std::vector<ScoredInstance> score_instances(const LabelImage& labels,
                                                   const InstanceScoreStack& stack) {
  require_same_shape(labels.shape(), stack.shape, "score_instances");
  std::vector<ScoredInstance> out;
  for (auto& [k, entry] : label_instances(labels)) {
    const auto ch = static_cast<std::size_t>(k - 1);
    if (ch >= stack.channels.size() || stack.channels[ch].key.cls != entry.first) {
      throw InvariantError("label instance " + std::to_string(k) + " has no matching score channel");
    }
    double best = 0.0;
    for (auto p : entry.second) best = std::max(best, stack.channels[ch].scores[p]);
    out.push_back({entry.first, std::move(entry.second), best});
  }
  return out;
}

struct ApResult {
  std::map<double, double> ap;                          // threshold -> mean AP over classes
  std::map<double, std::map<int, double>> per_class;    // threshold -> class -> AP
  std::vector<std::string> match_log;
  bool undefined = false;                               // no ground truth of any class
};

// Per class: predictions sorted by score (stable), each greedily matched to the
// unmatched ground truth of highest IoU (ties to the lower index) when that IoU
// reaches the threshold. AP is the area under the exact precision-recall step
// curve, i.e. the mean over ground truths of the precision at each true positive.
inline ApResult ap_r(const std::vector<ScoredInstance>& preds, const std::vector<GtInstance>& gts,
                     const std::vector<double>& thresholds = {0.5, 0.7}) {
  ApResult out;
  std::vector<int> classes;
  for (const auto& g : gts) classes.push_back(g.cls);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  out.undefined = classes.empty();

  for (double thr : thresholds) {
    out.per_class[thr];
    double sum = 0.0;
    for (int c : classes) {
      std::vector<std::size_t> gi, pi;
      for (std::size_t k = 0; k < gts.size(); ++k) {
        if (gts[k].cls == c) gi.push_back(k);
      }
      for (std::size_t k = 0; k < preds.size(); ++k) {
        if (preds[k].cls == c) pi.push_back(k);
      }
      std::stable_sort(pi.begin(), pi.end(),
                       [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
      std::vector<bool> used(gi.size(), false);
      std::size_t tp = 0;
      double ap = 0.0;
      for (std::size_t rank = 0; rank < pi.size(); ++rank) {
        const auto& p = preds[pi[rank]];
        double best = -1.0;
        std::size_t best_g = 0;
        for (std::size_t g = 0; g < gi.size(); ++g) {
          if (used[g]) continue;
          const double iou = mask_iou(p.mask, gts[gi[g]].mask);
          if (iou > best) {
            best = iou;
            best_g = g;
          }
        }
        const bool hit = best >= thr;
        if (hit) {
          used[best_g] = true;
          ++tp;
          ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
        }
        out.match_log.push_back("thr=" + std::to_string(thr) + " class=" + std::to_string(c) +
                                " pred=" + std::to_string(pi[rank]) +
                                (hit ? " tp gt=" + std::to_string(gi[best_g]) : std::string(" fp")) +
                                " iou=" + std::to_string(std::max(best, 0.0)));
      }
      ap /= static_cast<double>(gi.size());
      out.per_class[thr][c] = ap;
      sum += ap;
    }
    out.ap[thr] = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  }
  return out;
}

struct MiouResult {
  double miou = 0.0;
  std::map<int, double> class_iou;  // background is class 0
};

inline MiouResult miou(const LabelImage& pred, const LabelImage& gt) {
  require_same_shape(pred.shape(), gt.shape(), "miou");
  std::map<int, std::size_t> inter, pred_count, gt_count;
  for (std::size_t i = 0; i < gt.class_plane.size(); ++i) {
    const int p = pred.class_plane[i];
    const int g = gt.class_plane[i];
    ++pred_count[p];
    ++gt_count[g];
    if (p == g) ++inter[p];
  }
  std::map<int, bool> present;
  for (auto& [c, n] : pred_count) present[c] = true;
  for (auto& [c, n] : gt_count) present[c] = true;
  MiouResult out;
  for (auto& [c, unused] : present) {
    const double in = static_cast<double>(inter[c]);
    const double un = static_cast<double>(pred_count[c] + gt_count[c]) - in;
    out.class_iou[c] = in / un;
    out.miou += out.class_iou[c];
  }
  out.miou /= static_cast<double>(out.class_iou.size());
  return out;
}

struct EvalReport {
  std::map<double, double> ap_per_threshold;
  std::map<double, std::map<int, double>> ap_per_class;
  bool ap_undefined = false;
  std::optional<double> miou;
  std::map<int, double> class_iou;
  std::vector<std::string> match_log;
};

inline EvalReport evaluate(const LabelImage& pred, const InstanceScoreStack* stack, const LabelImage& gt,
                           const std::vector<double>& thresholds = {0.5, 0.7}) {
  EvalReport r;
  std::vector<ScoredInstance> preds;
  if (stack != nullptr) {
    preds = score_instances(pred, *stack);
  } else {
    // Without a score stack every predicted instance scores 1; ties keep id order.
    for (auto& [k, entry] : label_instances(pred)) preds.push_back({entry.first, std::move(entry.second), 1.0});
  }
  const ApResult ap = ap_r(preds, gt_instances(gt), thresholds);
  r.ap_per_threshold = ap.ap;
  r.ap_per_class = ap.per_class;
  r.ap_undefined = ap.undefined;
  r.match_log = ap.match_log;
  const MiouResult m = miou(pred, gt);
  r.miou = m.miou;
  r.class_iou = m.class_iou;
  return r;
}

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Fixed-format table: metric, class, value.
inline std::string report_table(const EvalReport& r) {
  std::string out = "metric\tclass\tvalue\n";
  for (auto& [thr, v] : r.ap_per_threshold) {
    const std::string name = "ap_r" + std::to_string(static_cast<int>(std::lround(thr * 100)));
    for (auto& [c, a] : r.ap_per_class.at(thr)) out += name + "\t" + std::to_string(c) + "\t" + fmt4(a) + "\n";
    out += name + "\tmean\t" + (r.ap_undefined ? std::string("undefined") : fmt4(v)) + "\n";
  }
  for (auto& [c, v] : r.class_iou) out += "iou\t" + std::to_string(c) + "\t" + fmt4(v) + "\n";
  if (r.miou) out += "miou\tmean\t" + fmt4(*r.miou) + "\n";
  return out;
}

inline std::string report_kv(const EvalReport& r) {
  std::string out;
  for (auto& [thr, v] : r.ap_per_threshold) {
    const std::string name = "ap_r" + std::to_string(static_cast<int>(std::lround(thr * 100)));
    out += name + "=" + (r.ap_undefined ? std::string("undefined") : fmt4(v)) + "\n";
    for (auto& [c, a] : r.ap_per_class.at(thr)) out += name + ".class" + std::to_string(c) + "=" + fmt4(a) + "\n";
  }
  if (r.miou) out += "miou=" + fmt4(*r.miou) + "\n";
  for (auto& [c, v] : r.class_iou) out += "iou.class" + std::to_string(c) + "=" + fmt4(v) + "\n";
  for (std::size_t k = 0; k < r.match_log.size(); ++k) out += "match." + std::to_string(k) + "=" + r.match_log[k] + "\n";
  return out;
}

}  // namespace pixrel
