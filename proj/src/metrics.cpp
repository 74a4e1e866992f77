#include "promptrl/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include <spdlog/spdlog.h>

#include "promptrl/errors.hpp"

namespace promptrl {

namespace {

void check_same(const BinaryMask& a, const BinaryMask& b, const char* who) {
  if (!a.same_shape(b)) throw InputError(std::string(who) + ": mask shapes differ");
}

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
  Confusion c;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace

BinaryMask binarize(const MaskProb& prob, double threshold) {
  BinaryMask out(prob.h, prob.w, 0);
  for (std::size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] >= threshold;
  return out;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "iou");
  const Confusion c = confusion(pred, gt);
  const double uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : c.tp / uni;
}

double mae(const MaskProb& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw InputError("mae: mask shapes differ");
  if (gt.data.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    total += std::abs(pred.data[i] - static_cast<double>(gt.data[i]));
  }
  return total / static_cast<double>(gt.data.size());
}

double ber(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "ber");
  const Confusion c = confusion(pred, gt);
  double tpr = 1.0, tnr = 1.0;
  if (c.tp + c.fn > 0) {
    tpr = c.tp / (c.tp + c.fn);
  } else {
    spdlog::warn("ber: ground truth has no foreground; using recall 1 for that class");
  }
  if (c.tn + c.fp > 0) {
    tnr = c.tn / (c.tn + c.fp);
  } else {
    spdlog::warn("ber: ground truth has no background; using recall 1 for that class");
  }
  return 100.0 * (1.0 - 0.5 * (tpr + tnr));
}

double f_measure(const BinaryMask& pred, const BinaryMask& gt, double beta_sq) {
  check_same(pred, gt, "f_measure");
  const Confusion c = confusion(pred, gt);
  const double precision = (c.tp + c.fp) > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double recall = (c.tp + c.fn) > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  const double den = beta_sq * precision + recall;
  return den == 0.0 ? 0.0 : (1.0 + beta_sq) * precision * recall / den;
}

double e_measure(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "e_measure");
  const std::size_t n = gt.data.size();
  if (n == 0) return 0.0;
  double sum_g = 0.0, sum_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_g += gt.data[i];
    sum_p += pred.data[i];
  }
  const double nn = static_cast<double>(n);
  if (sum_g == 0.0) return 1.0 - sum_p / nn;  // all-background ground truth
  if (sum_g == nn) return sum_p / nn;         // all-foreground ground truth
  const double mean_g = sum_g / nn;
  const double mean_p = sum_p / nn;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ag = gt.data[i] - mean_g;
    const double ap = pred.data[i] - mean_p;
    const double align = 2.0 * ag * ap / (ag * ag + ap * ap + eps);
    total += (1.0 + align) * (1.0 + align) / 4.0;
  }
  return total / nn;
}

double foreground_rate(std::span<const Pixel> points, const BinaryMask& gt, int T) {
  if (T <= 0) throw UsageError("foreground rate needs T >= 1");
  int hits = 0;
  for (const Pixel& p : points) {
    if (p.y < 0 || p.y >= gt.h || p.x < 0 || p.x >= gt.w) {
      throw BoundsError("foreground rate point outside the mask");
    }
    hits += gt.at(p.y, p.x) != 0;
  }
  return static_cast<double>(hits) / T;
}

ImageMetrics evaluate_mask(const MaskProb& pred, const BinaryMask& gt) {
  const BinaryMask bin = binarize(pred);
  return {iou(bin, gt), mae(pred, gt), ber(bin, gt), f_measure(bin, gt), e_measure(bin, gt)};
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::vector<ImageMetrics> MetricsReport::mean_curve() const {
  std::vector<ImageMetrics> curve(static_cast<std::size_t>(T));
  if (images.empty()) return curve;
  for (const ImageReport& img : images) {
    for (int t = 0; t < T && t < static_cast<int>(img.per_step.size()); ++t) {
      const ImageMetrics& m = img.per_step[t];
      curve[t].iou += m.iou;
      curve[t].mae += m.mae;
      curve[t].ber += m.ber;
      curve[t].f_beta += m.f_beta;
      curve[t].e_phi += m.e_phi;
    }
  }
  const double inv = 1.0 / static_cast<double>(images.size());
  for (ImageMetrics& m : curve) {
    m.iou *= inv;
    m.mae *= inv;
    m.ber *= inv;
    m.f_beta *= inv;
    m.e_phi *= inv;
  }
  return curve;
}

ImageMetrics MetricsReport::mean_final() const {
  const auto curve = mean_curve();
  return curve.empty() ? ImageMetrics{} : curve.back();
}

double MetricsReport::mean_fr() const {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (const ImageReport& img : images) total += img.fr;
  return total / static_cast<double>(images.size());
}

nlohmann::json to_json(const ImageMetrics& m) {
  return {{"iou", m.iou}, {"mae", m.mae}, {"ber", m.ber}, {"f_beta", m.f_beta}, {"e_phi", m.e_phi}};
}

ImageMetrics image_metrics_from_json(const nlohmann::json& j) {
  return {j.at("iou").get<double>(), j.at("mae").get<double>(), j.at("ber").get<double>(),
          j.at("f_beta").get<double>(), j.at("e_phi").get<double>()};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (const ImageReport& img : r.images) {
    nlohmann::json steps = nlohmann::json::array();
    for (const ImageMetrics& m : img.per_step) steps.push_back(to_json(m));
    images.push_back({{"scene", img.scene}, {"fr", img.fr}, {"per_step", steps}});
  }
  nlohmann::json curve = nlohmann::json::array();
  for (const ImageMetrics& m : r.mean_curve()) curve.push_back(to_json(m));
  return {{"version", 1},
          {"run_id", r.run_id},
          {"policy", r.policy},
          {"label_source", r.label_source},
          {"T", r.T},
          {"n_images", r.images.size()},
          {"mean_fr", r.mean_fr()},
          {"mean_final", to_json(r.mean_final())},
          {"mean_curve", curve},
          {"images", images}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.run_id = j.at("run_id").get<std::string>();
  r.policy = j.at("policy").get<std::string>();
  r.label_source = j.at("label_source").get<std::string>();
  r.T = j.at("T").get<int>();
  for (const auto& img : j.at("images")) {
    ImageReport ir;
    ir.scene = img.at("scene").get<std::string>();
    ir.fr = img.at("fr").get<double>();
    for (const auto& m : img.at("per_step")) ir.per_step.push_back(image_metrics_from_json(m));
    r.images.push_back(std::move(ir));
  }
  return r;
}

void write_records(const MetricsReport& r, std::ostream& out) {
  for (const ImageReport& img : r.images) {
    for (std::size_t t = 0; t < img.per_step.size(); ++t) {
      nlohmann::json rec = to_json(img.per_step[t]);
      rec["scene"] = img.scene;
      rec["t"] = t + 1;
      out << rec.dump() << '\n';
    }
    out << nlohmann::json{{"scene", img.scene}, {"fr", img.fr}}.dump() << '\n';
  }
}

void write_text_report(const MetricsReport& r, std::ostream& out) {
  const ImageMetrics fin = r.mean_final();
  out << "run: " << r.run_id << "\n"
      << "policy: " << r.policy << "  label_source: " << r.label_source << "  T: " << r.T
      << "  images: " << r.images.size() << "\n\n";
  out << std::fixed << std::setprecision(4);
  out << "mean mIoU  " << fin.iou << "\n"
      << "mean MAE   " << fin.mae << "\n"
      << "mean BER   " << fin.ber << "\n"
      << "mean F_b   " << fin.f_beta << "\n"
      << "mean E_phi " << fin.e_phi << "\n"
      << "mean FR    " << r.mean_fr() << "\n\n";
  out << "   t     mIoU      MAE      BER      F_b    E_phi\n";
  const auto curve = r.mean_curve();
  for (std::size_t t = 0; t < curve.size(); ++t) {
    out << std::setw(4) << t + 1 << std::setw(9) << curve[t].iou << std::setw(9) << curve[t].mae
        << std::setw(9) << curve[t].ber << std::setw(9) << curve[t].f_beta << std::setw(9)
        << curve[t].e_phi << "\n";
  }
}

}  // namespace promptrl
