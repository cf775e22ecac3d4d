#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fanet/architectures.hpp"
#include "fanet/data.hpp"

// Segmentation metrics over an integer confusion matrix, the
// precision/recall/F1 matrix triple, per-channel statistics of the learned
// attention parameters over a dataset, and excitation-map export.

namespace fanet {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t k) : k_(k), n_(static_cast<size_t>(k * k), 0) {}

  int64_t k() const { return k_; }
  int64_t at(int64_t gt, int64_t pred) const {
    return n_[static_cast<size_t>(gt * k_ + pred)];
  }

  // n[gt][pred] += per-pixel counts. Ids must be < k.
  void accumulate(const std::vector<uint8_t>& gt,
                  const std::vector<uint8_t>& pred) {
    if (gt.size() != pred.size())
      throw ShapeError("confusion: gt has " + std::to_string(gt.size()) +
                       " pixels, prediction " + std::to_string(pred.size()));
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] >= k_ || pred[i] >= k_)
        throw DataError("confusion: class id out of range at pixel " +
                        std::to_string(i));
      ++n_[static_cast<size_t>(gt[i] * k_ + pred[i])];
    }
  }

  // Merging shards is plain integer addition, so accumulation order never
  // matters.
  void add(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("confusion: class count mismatch");
    for (size_t i = 0; i < n_.size(); ++i) n_[i] += other.n_[i];
  }

  int64_t row_total(int64_t gt) const {
    int64_t t = 0;
    for (int64_t j = 0; j < k_; ++j) t += at(gt, j);
    return t;
  }
  int64_t col_total(int64_t pred) const {
    int64_t t = 0;
    for (int64_t i = 0; i < k_; ++i) t += at(i, pred);
    return t;
  }
  int64_t total() const {
    int64_t t = 0;
    for (int64_t v : n_) t += v;
    return t;
  }

  void scale_counts(int64_t factor) {
    for (auto& v : n_) v *= factor;
  }

 private:
  int64_t k_;
  std::vector<int64_t> n_;
};

struct SegMetrics {
  double pixel_acc = 0, mean_acc = 0, mean_iu = 0, fw_iu = 0;
  std::vector<double> per_class_iu;
  std::vector<bool> valid;  // class participates (seen in gt or prediction)
};

// pixel_acc = sum n_ii / sum t_i
// mean_acc  = mean over valid classes of n_ii / t_i
// iu_i      = n_ii / (t_i + sum_j n_ji - n_ii)
// fw_iu     = (sum t_k)^-1 sum t_i * iu_i
// A class is valid when it occurs in ground truth or prediction; absent
// classes are excluded from the means rather than counted as 0/0.
inline SegMetrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ConfigError("compute_metrics: empty matrix");
  int64_t k = cm.k();
  SegMetrics m;
  m.per_class_iu.resize(static_cast<size_t>(k), 0.0);
  m.valid.resize(static_cast<size_t>(k), false);
  int64_t diag = 0, total = cm.total();
  double acc_sum = 0, iu_sum = 0, fw_sum = 0;
  int64_t valid_count = 0;
  for (int64_t i = 0; i < k; ++i) {
    int64_t tii = cm.at(i, i);
    int64_t ti = cm.row_total(i);
    int64_t ci = cm.col_total(i);
    diag += tii;
    if (ti + ci == 0) continue;
    m.valid[static_cast<size_t>(i)] = true;
    ++valid_count;
    double iu = static_cast<double>(tii) /
                static_cast<double>(ti + ci - tii);
    m.per_class_iu[static_cast<size_t>(i)] = iu;
    iu_sum += iu;
    if (ti > 0) acc_sum += static_cast<double>(tii) / static_cast<double>(ti);
    fw_sum += static_cast<double>(ti) * iu;
  }
  m.pixel_acc = static_cast<double>(diag) / static_cast<double>(total);
  m.mean_acc = acc_sum / static_cast<double>(valid_count);
  m.mean_iu = iu_sum / static_cast<double>(valid_count);
  m.fw_iu = fw_sum / static_cast<double>(total);
  return m;
}

struct PrfMatrices {
  int64_t k = 0;
  std::vector<double> precision, recall, f1;  // k*k, percentages
  std::vector<bool> col_valid, row_valid;     // zero column/row flags

  double p(int64_t i, int64_t j) const {
    return precision[static_cast<size_t>(i * k + j)];
  }
  double r(int64_t i, int64_t j) const {
    return recall[static_cast<size_t>(i * k + j)];
  }
  double f(int64_t i, int64_t j) const {
    return f1[static_cast<size_t>(i * k + j)];
  }
};

// P is column-normalized (per predicted class), R row-normalized (per
// ground-truth class), F1 the elementwise harmonic mean; all in percent.
inline PrfMatrices prf_matrices(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ConfigError("prf_matrices: empty matrix");
  int64_t k = cm.k();
  PrfMatrices out;
  out.k = k;
  out.precision.assign(static_cast<size_t>(k * k), 0.0);
  out.recall.assign(static_cast<size_t>(k * k), 0.0);
  out.f1.assign(static_cast<size_t>(k * k), 0.0);
  out.col_valid.resize(static_cast<size_t>(k));
  out.row_valid.resize(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j)
    out.col_valid[static_cast<size_t>(j)] = cm.col_total(j) > 0;
  for (int64_t i = 0; i < k; ++i)
    out.row_valid[static_cast<size_t>(i)] = cm.row_total(i) > 0;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j) {
      int64_t col = cm.col_total(j), row = cm.row_total(i);
      double p = col > 0 ? 100.0 * static_cast<double>(cm.at(i, j)) /
                               static_cast<double>(col)
                         : 0.0;
      double r = row > 0 ? 100.0 * static_cast<double>(cm.at(i, j)) /
                               static_cast<double>(row)
                         : 0.0;
      out.precision[static_cast<size_t>(i * k + j)] = p;
      out.recall[static_cast<size_t>(i * k + j)] = r;
      out.f1[static_cast<size_t>(i * k + j)] =
          (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
  return out;
}

// Class predictions from logits; ties resolve to the lowest class id.
template <typename T>
std::vector<uint8_t> argmax_classes(const Tensor<T>& logits) {
  int64_t n = logits.dim(0), k = logits.dim(1),
          hw = logits.dim(2) * logits.dim(3);
  std::vector<uint8_t> out(static_cast<size_t>(n * hw));
  for (int64_t i = 0; i < n; ++i) {
    const T* base = logits.values().data() + i * k * hw;
    for (int64_t j = 0; j < hw; ++j) {
      int64_t best = 0;
      T bv = base[j];
      for (int64_t c = 1; c < k; ++c)
        if (base[c * hw + j] > bv) {
          bv = base[c * hw + j];
          best = c;
        }
      out[static_cast<size_t>(i * hw + j)] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

// Eval-mode confusion matrix of a model over a dataset.
template <typename T>
ConfusionMatrix evaluate_model(Model<T>& model,
                               const std::vector<SegmentationSample>& samples,
                               int64_t batch_size = 4) {
  NoGradGuard ng;
  ConfusionMatrix cm(model.spec.num_classes);
  for (size_t start = 0; start < samples.size();
       start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start;
         i < samples.size() && i < start + static_cast<size_t>(batch_size);
         ++i)
      idx.push_back(i);
    auto logits = model.forward(images_to_tensor<T>(samples, idx), false);
    auto pred = argmax_classes(logits);
    std::vector<uint8_t> gt;
    for (size_t i : idx)
      gt.insert(gt.end(), samples[i].mask.begin(), samples[i].mask.end());
    cm.accumulate(gt, pred);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Attention-parameter statistics (the Fig.-8-style summary)
// ---------------------------------------------------------------------------

struct ChannelStats {
  int64_t count = 0;
  double mean = 0, stddev = 0, min = 0, max = 0;
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
};

struct SiteStats {
  std::string site;     // "fiam3", "fsam1"
  std::string fig_key;  // "Merge-Conv3_128", "FSAM1_512"
  std::vector<std::vector<float>> raw_s, raw_g;  // [channel][sample]
  std::vector<ChannelStats> s_stats, g_stats;
};

namespace detail {

inline double quantile_sorted(const std::vector<float>& sorted, double q) {
  if (sorted.empty()) return 0;
  double pos = q * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(std::floor(pos));
  double frac = pos - std::floor(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Streaming accumulation (Welford) for count/mean/std plus min/max;
// quantiles from the retained raw values.
inline ChannelStats summarize_channel(const std::vector<float>& raw) {
  ChannelStats st;
  double mean = 0, m2 = 0;
  double mn = 1e300, mx = -1e300;
  int64_t n = 0;
  for (float v : raw) {
    ++n;
    double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
  }
  st.count = n;
  st.mean = mean;
  st.stddev = n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0;
  st.min = n > 0 ? mn : 0;
  st.max = n > 0 ? mx : 0;
  std::vector<float> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  st.q05 = quantile_sorted(sorted, 0.05);
  st.q25 = quantile_sorted(sorted, 0.25);
  st.q50 = quantile_sorted(sorted, 0.50);
  st.q75 = quantile_sorted(sorted, 0.75);
  st.q95 = quantile_sorted(sorted, 0.95);
  return st;
}

}  // namespace detail

// Evaluates the model over the dataset (eval mode, one sample at a time)
// and summarizes every per-sample s_c and g_c per site and channel.
// Variants without attention return an empty vector.
template <typename T>
std::vector<SiteStats> collect_attention_stats(
    Model<T>& model, const std::vector<SegmentationSample>& samples) {
  NoGradGuard ng;
  std::vector<SiteStats> stats;
  bool first = true;
  for (size_t si = 0; si < samples.size(); ++si) {
    ForwardTrace<T> trace;
    model.forward(images_to_tensor<T>(samples, {si}), false, &trace);
    if (first) {
      for (const auto& site : trace.sites) {
        SiteStats st;
        st.site = site.id;
        st.fig_key = site.fig_key;
        st.raw_s.resize(static_cast<size_t>(site.s.dim(1)));
        st.raw_g.resize(static_cast<size_t>(site.s.dim(1)));
        stats.push_back(std::move(st));
      }
      first = false;
    }
    for (size_t k = 0; k < trace.sites.size(); ++k) {
      const auto& site = trace.sites[k];
      int64_t c = site.s.dim(1);
      for (int64_t ch = 0; ch < c; ++ch) {
        stats[k].raw_s[static_cast<size_t>(ch)].push_back(
            static_cast<float>(site.s.values()[static_cast<size_t>(ch)]));
        stats[k].raw_g[static_cast<size_t>(ch)].push_back(
            static_cast<float>(site.g.values()[static_cast<size_t>(ch)]));
      }
    }
  }
  for (auto& st : stats) {
    st.s_stats.reserve(st.raw_s.size());
    st.g_stats.reserve(st.raw_g.size());
    for (const auto& raw : st.raw_s)
      st.s_stats.push_back(detail::summarize_channel(raw));
    for (const auto& raw : st.raw_g)
      st.g_stats.push_back(detail::summarize_channel(raw));
  }
  return stats;
}

inline void write_site_stats_csv(const std::string& path,
                                 const std::vector<const SiteStats*>& sites) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write stats csv: " + path);
  f << "key,channel,param,count,mean,std,min,q05,q25,q50,q75,q95,max\n";
  auto row = [&](const SiteStats& st, int64_t ch, const char* param,
                 const ChannelStats& cs) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "%s,%lld,%s,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,"
                  "%.9g\n",
                  st.fig_key.c_str(), static_cast<long long>(ch), param,
                  static_cast<long long>(cs.count), cs.mean, cs.stddev,
                  cs.min, cs.q05, cs.q25, cs.q50, cs.q75, cs.q95, cs.max);
    f << buf;
  };
  for (const SiteStats* st : sites) {
    for (size_t ch = 0; ch < st->s_stats.size(); ++ch)
      row(*st, static_cast<int64_t>(ch), "s", st->s_stats[ch]);
    for (size_t ch = 0; ch < st->g_stats.size(); ++ch)
      row(*st, static_cast<int64_t>(ch), "g", st->g_stats[ch]);
  }
}

// ---------------------------------------------------------------------------
// Excitation-map export (the Fig.-9-style view)
// ---------------------------------------------------------------------------

template <typename T>
struct ExcitationMaps {
  std::string site_id;
  int64_t channel = 0;
  int64_t h = 0, w = 0;
  std::vector<T> input, output, difference, ratio;
  T s = 0, g = 0;
};

// difference = output - input; ratio = output/input where |input| > 1e-12,
// else 1 (an untouched zero pixel divides to 1, not NaN).
template <typename T>
ExcitationMaps<T> compute_excitation_maps(const ExcitationSite<T>& site,
                                          int64_t channel) {
  int64_t c = site.s.dim(1), h = site.input.dim(2), w = site.input.dim(3);
  if (channel < 0 || channel >= c)
    throw ConfigError("excitation maps: channel " + std::to_string(channel) +
                      " out of range [0, " + std::to_string(c) + ")");
  ExcitationMaps<T> maps;
  maps.site_id = site.id;
  maps.channel = channel;
  maps.h = h;
  maps.w = w;
  maps.s = site.s.values()[static_cast<size_t>(channel)];
  maps.g = site.g.values()[static_cast<size_t>(channel)];
  int64_t off = channel * h * w;
  maps.input.assign(site.input.values().begin() + off,
                    site.input.values().begin() + off + h * w);
  maps.output.assign(site.output.values().begin() + off,
                     site.output.values().begin() + off + h * w);
  maps.difference.resize(static_cast<size_t>(h * w));
  maps.ratio.resize(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    T in = maps.input[static_cast<size_t>(i)];
    T out = maps.output[static_cast<size_t>(i)];
    maps.difference[static_cast<size_t>(i)] = out - in;
    maps.ratio[static_cast<size_t>(i)] =
        std::fabs(static_cast<double>(in)) > 1e-12 ? out / in : T(1);
  }
  return maps;
}

namespace detail {

template <typename T>
std::vector<float> normalize_map(const std::vector<T>& v) {
  double mn = 1e300, mx = -1e300;
  for (T e : v) {
    mn = std::min(mn, static_cast<double>(e));
    mx = std::max(mx, static_cast<double>(e));
  }
  std::vector<float> out(v.size(), 0.5f);
  if (mx > mn)
    for (size_t i = 0; i < v.size(); ++i)
      out[i] = static_cast<float>((static_cast<double>(v[i]) - mn) /
                                  (mx - mn));
  return out;
}

}  // namespace detail

// Runs one traced eval forward on the sample, then writes, per requested
// channel, four normalized grayscale PNGs plus a raw numeric CSV with the
// (g_c, s_c) annotation. Returns the computed maps.
template <typename T>
std::vector<ExcitationMaps<T>> export_excitation_maps(
    Model<T>& model, const SegmentationSample& sample,
    const std::string& module_id, const std::vector<int64_t>& channels,
    const std::string& out_dir) {
  NoGradGuard ng;
  std::vector<SegmentationSample> one{sample};
  ForwardTrace<T> trace;
  model.forward(images_to_tensor<T>(one, {0}), false, &trace);
  const ExcitationSite<T>* found = nullptr;
  for (const auto& site : trace.sites)
    if (site.id == module_id) found = &site;
  if (!found) {
    std::string have;
    for (const auto& site : trace.sites) have += " " + site.id;
    throw ConfigError("no excitation site '" + module_id + "' in this model;"
                      " available:" + (have.empty() ? " none" : have));
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<ExcitationMaps<T>> result;
  for (int64_t ch : channels) {
    ExcitationMaps<T> maps = compute_excitation_maps(*found, ch);
    std::string stem = module_id + "_ch" + std::to_string(ch);
    save_gray_png((fs::path(out_dir) / (stem + "_input.png")).string(),
                  maps.h, maps.w, detail::normalize_map(maps.input));
    save_gray_png((fs::path(out_dir) / (stem + "_output.png")).string(),
                  maps.h, maps.w, detail::normalize_map(maps.output));
    save_gray_png((fs::path(out_dir) / (stem + "_difference.png")).string(),
                  maps.h, maps.w, detail::normalize_map(maps.difference));
    save_gray_png((fs::path(out_dir) / (stem + "_ratio.png")).string(),
                  maps.h, maps.w, detail::normalize_map(maps.ratio));
    std::ofstream csv((fs::path(out_dir) / (stem + ".csv")).string(),
                      std::ios::trunc);
    if (!csv) throw DataError("cannot write map csv for " + stem);
    csv << "g," << maps.g << "\ns," << maps.s << "\n";
    auto block = [&](const char* name, const std::vector<T>& v) {
      csv << name << "\n";
      for (int64_t y = 0; y < maps.h; ++y) {
        for (int64_t x = 0; x < maps.w; ++x) {
          if (x) csv << ",";
          csv << v[static_cast<size_t>(y * maps.w + x)];
        }
        csv << "\n";
      }
    };
    block("input", maps.input);
    block("output", maps.output);
    block("difference", maps.difference);
    block("ratio", maps.ratio);
    result.push_back(std::move(maps));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

// One metrics row, percentages to 3 decimals.
inline std::string format_metrics_row(const std::string& name,
                                      const SegMetrics& m) {
  char buf[512];
  std::string iu;
  for (double v : m.per_class_iu) {
    char b2[48];
    std::snprintf(b2, sizeof b2, "\t%.3f", 100.0 * v);
    iu += b2;
  }
  std::snprintf(buf, sizeof buf, "%s\t%.3f\t%.3f\t%.3f\t%.3f%s",
                name.c_str(), 100.0 * m.pixel_acc, 100.0 * m.mean_acc,
                100.0 * m.mean_iu, 100.0 * m.fw_iu, iu.c_str());
  return buf;
}

inline void write_matrix_csv(const std::string& path, int64_t k,
                             const std::vector<double>& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write matrix csv: " + path);
  for (int64_t j = 0; j < k; ++j) f << "," << j << "_p";
  f << "\n";
  for (int64_t i = 0; i < k; ++i) {
    f << i << "_t";
    for (int64_t j = 0; j < k; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.1f",
                    m[static_cast<size_t>(i * k + j)]);
      f << buf;
    }
    f << "\n";
  }
}

}  // namespace fanet
