#include "ccg/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ccg {

Ablation parse_ablation(const std::string& name) {
  if (name == "baseline") return Ablation::kBaseline;
  if (name == "IR") return Ablation::kIR;
  if (name == "IK") return Ablation::kIK;
  if (name == "KR") return Ablation::kKR;
  if (name == "IR+IK") return Ablation::kIRIK;
  if (name == "IR+IK+KR") return Ablation::kIRIKKR;
  fail("unknown ablation mode '", name, "' (expected baseline, IR, IK, KR, IR+IK or IR+IK+KR)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kBaseline: return "baseline";
    case Ablation::kIR: return "IR";
    case Ablation::kIK: return "IK";
    case Ablation::kKR: return "KR";
    case Ablation::kIRIK: return "IR+IK";
    case Ablation::kIRIKKR: return "IR+IK+KR";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail("config key ", key, ": expected a number, got '", v, "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  fail("config key ", key, ": expected an integer, got '", v, "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config key ", key, ": expected true or false, got '", v, "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const T& values) {
  std::string s;
  for (const auto& v : values) {
    if (!s.empty()) s += ",";
    s += fmt(static_cast<double>(v));
  }
  return s;
}

}  // namespace

BackboneConfig TrainConfig::backbone_config() const {
  BackboneConfig b;
  b.kind = backbone;
  b.input_size = input_size;
  b.tiny_channels = tiny_channels;
  b.tiny_strides = tiny_strides;
  b.norm_mean = norm_mean;
  b.norm_std = norm_std;
  b.normalize_output = feature_norm;
  return b;
}

void TrainConfig::validate() const {
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(lr0 > 0)) fail("lr0 must be positive");
  if (!(lr_decay_factor > 0) || lr_decay_every < 1) fail("learning-rate decay must be positive");
  if (momentum < 0 || momentum >= 1) fail("momentum must be in [0, 1)");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(grad_clip > 0)) fail("grad_clip must be positive");
  if (!(beta_b > 0)) fail("beta_b must be positive");
  if (w_base < 0 || w_ir < 0 || w_ik < 0 || w_kr < 0) fail("loss weights must be >= 0");
  if (num_classes < 1 || num_classes > 14) fail("num_classes must be in [1, 14]");
  if (input_size < 1) fail("input_size must be positive");
  if (hidden_width < 1) fail("hidden_width must be positive");
  if (patch_count < 1) fail("patch_count must be >= 1");
  if (!(slic_compactness > 0) || slic_iterations < 1) fail("bad SLIC settings");
  if (upsample_factor < 1) fail("upsample_factor must be >= 1");
  if (threshold < 0 || threshold > 1) fail("threshold must be in [0, 1]");
  for (double s : norm_std) {
    if (!(s > 0)) fail("norm_std entries must be positive");
  }
  if (cv_folds < 0 || (cv_folds > 0 && (cv_fold < 0 || cv_fold >= cv_folds))) fail("bad cross-validation fold");
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  using Setter = std::function<void(TrainConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"epochs", [](TrainConfig& c, const std::string& s) { c.epochs = static_cast<int>(to_int("epochs", s)); }},
      {"lr0", [](TrainConfig& c, const std::string& s) { c.lr0 = to_double("lr0", s); }},
      {"lr_decay_factor", [](TrainConfig& c, const std::string& s) { c.lr_decay_factor = to_double("lr_decay_factor", s); }},
      {"lr_decay_every", [](TrainConfig& c, const std::string& s) { c.lr_decay_every = static_cast<int>(to_int("lr_decay_every", s)); }},
      {"momentum", [](TrainConfig& c, const std::string& s) { c.momentum = to_double("momentum", s); }},
      {"nesterov", [](TrainConfig& c, const std::string& s) { c.nesterov = to_bool("nesterov", s); }},
      {"weight_decay", [](TrainConfig& c, const std::string& s) { c.weight_decay = to_double("weight_decay", s); }},
      {"batch_size", [](TrainConfig& c, const std::string& s) { c.batch_size = static_cast<int>(to_int("batch_size", s)); }},
      {"grad_clip", [](TrainConfig& c, const std::string& s) { c.grad_clip = to_double("grad_clip", s); }},
      {"seed", [](TrainConfig& c, const std::string& s) { c.seed = static_cast<std::uint64_t>(to_int("seed", s)); }},
      {"beta_b", [](TrainConfig& c, const std::string& s) { c.beta_b = to_double("beta_b", s); }},
      {"w_base", [](TrainConfig& c, const std::string& s) { c.w_base = to_double("w_base", s); }},
      {"w_ir", [](TrainConfig& c, const std::string& s) { c.w_ir = to_double("w_ir", s); }},
      {"w_ik", [](TrainConfig& c, const std::string& s) { c.w_ik = to_double("w_ik", s); }},
      {"w_kr", [](TrainConfig& c, const std::string& s) { c.w_kr = to_double("w_kr", s); }},
      {"ablation", [](TrainConfig& c, const std::string& s) { c.ablation = parse_ablation(s); }},
      {"num_classes", [](TrainConfig& c, const std::string& s) { c.num_classes = static_cast<int>(to_int("num_classes", s)); }},
      {"backbone", [](TrainConfig& c, const std::string& s) { c.backbone = s; }},
      {"input_size", [](TrainConfig& c, const std::string& s) { c.input_size = static_cast<int>(to_int("input_size", s)); }},
      {"tiny_channels", [](TrainConfig& c, const std::string& s) {
         c.tiny_channels.clear();
         for (const auto& item : split_list(s)) c.tiny_channels.push_back(static_cast<int>(to_int("tiny_channels", item)));
       }},
      {"tiny_strides", [](TrainConfig& c, const std::string& s) {
         c.tiny_strides.clear();
         for (const auto& item : split_list(s)) c.tiny_strides.push_back(static_cast<int>(to_int("tiny_strides", item)));
       }},
      {"hidden_width", [](TrainConfig& c, const std::string& s) { c.hidden_width = static_cast<int>(to_int("hidden_width", s)); }},
      {"norm_mean", [](TrainConfig& c, const std::string& s) {
         const auto items = split_list(s);
         if (items.size() != 3) fail("config key norm_mean: expected 3 values");
         for (int i = 0; i < 3; ++i) c.norm_mean[i] = to_double("norm_mean", items[i]);
       }},
      {"norm_std", [](TrainConfig& c, const std::string& s) {
         const auto items = split_list(s);
         if (items.size() != 3) fail("config key norm_std: expected 3 values");
         for (int i = 0; i < 3; ++i) c.norm_std[i] = to_double("norm_std", items[i]);
       }},
      {"feature_norm", [](TrainConfig& c, const std::string& s) { c.feature_norm = to_bool("feature_norm", s); }},
      {"patch_count", [](TrainConfig& c, const std::string& s) { c.patch_count = static_cast<int>(to_int("patch_count", s)); }},
      {"slic_compactness", [](TrainConfig& c, const std::string& s) { c.slic_compactness = to_double("slic_compactness", s); }},
      {"slic_iterations", [](TrainConfig& c, const std::string& s) { c.slic_iterations = static_cast<int>(to_int("slic_iterations", s)); }},
      {"patch_cache_dir", [](TrainConfig& c, const std::string& s) { c.patch_cache_dir = s; }},
      {"upsample_factor", [](TrainConfig& c, const std::string& s) { c.upsample_factor = static_cast<int>(to_int("upsample_factor", s)); }},
      {"threshold", [](TrainConfig& c, const std::string& s) { c.threshold = to_double("threshold", s); }},
      {"cv_folds", [](TrainConfig& c, const std::string& s) { c.cv_folds = static_cast<int>(to_int("cv_folds", s)); }},
      {"cv_fold", [](TrainConfig& c, const std::string& s) { c.cv_fold = static_cast<int>(to_int("cv_fold", s)); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) fail("unknown config key '", key, "'");
  it->second(*this, v);
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "epochs = " << epochs << "\n"
     << "lr0 = " << fmt(lr0) << "\n"
     << "lr_decay_factor = " << fmt(lr_decay_factor) << "\n"
     << "lr_decay_every = " << lr_decay_every << "\n"
     << "momentum = " << fmt(momentum) << "\n"
     << "nesterov = " << (nesterov ? "true" : "false") << "\n"
     << "weight_decay = " << fmt(weight_decay) << "\n"
     << "batch_size = " << batch_size << "\n"
     << "grad_clip = " << fmt(grad_clip) << "\n"
     << "seed = " << seed << "\n"
     << "beta_b = " << fmt(beta_b) << "\n"
     << "w_base = " << fmt(w_base) << "\n"
     << "w_ir = " << fmt(w_ir) << "\n"
     << "w_ik = " << fmt(w_ik) << "\n"
     << "w_kr = " << fmt(w_kr) << "\n"
     << "ablation = " << to_string(ablation) << "\n"
     << "num_classes = " << num_classes << "\n"
     << "backbone = " << backbone << "\n"
     << "input_size = " << input_size << "\n"
     << "tiny_channels = " << join(tiny_channels) << "\n"
     << "tiny_strides = " << join(tiny_strides) << "\n"
     << "hidden_width = " << hidden_width << "\n"
     << "norm_mean = " << join(norm_mean) << "\n"
     << "norm_std = " << join(norm_std) << "\n"
     << "feature_norm = " << (feature_norm ? "true" : "false") << "\n"
     << "patch_count = " << patch_count << "\n"
     << "slic_compactness = " << fmt(slic_compactness) << "\n"
     << "slic_iterations = " << slic_iterations << "\n"
     << "patch_cache_dir = " << patch_cache_dir << "\n"
     << "upsample_factor = " << upsample_factor << "\n"
     << "threshold = " << fmt(threshold) << "\n"
     << "cv_folds = " << cv_folds << "\n"
     << "cv_fold = " << cv_fold << "\n";
  return os.str();
}

TrainConfig full_scale_config() {
  TrainConfig c;
  c.num_classes = 14;
  c.backbone = "resnet50";
  c.input_size = 512;
  c.hidden_width = 512;
  c.norm_mean = {0.485, 0.456, 0.406};
  c.norm_std = {0.229, 0.224, 0.225};
  c.feature_norm = false;
  c.upsample_factor = 2;
  return c;
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("config line ", row, ": expected key = value");
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) fail("cannot open config ", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

LossWeights effective_weights(const TrainConfig& c) {
  const bool ir = c.ablation == Ablation::kIR || c.ablation == Ablation::kIRIK || c.ablation == Ablation::kIRIKKR;
  const bool ik = c.ablation == Ablation::kIK || c.ablation == Ablation::kIRIK || c.ablation == Ablation::kIRIKKR;
  const bool kr = c.ablation == Ablation::kKR || c.ablation == Ablation::kIRIKKR;
  const int enabled = 1 + ir + ik + kr;
  const double disabled = (ir ? 0 : c.w_ir) + (ik ? 0 : c.w_ik) + (kr ? 0 : c.w_kr);
  const double share = disabled / enabled;
  return {c.w_base + share, ir ? c.w_ir + share : 0.0, ik ? c.w_ik + share : 0.0, kr ? c.w_kr + share : 0.0};
}

LossReport total_loss(LossReport r, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"l_base", r.l_base}, {"l_ir", r.l_ir}, {"l_ik", r.l_ik}, {"l_kr", r.l_kr}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite loss component " << name << " = " << value;
      throw NonFiniteLoss(os.str());
    }
  }
  r.l_all = w.base * r.l_base + w.ir * r.l_ir + w.ik * r.l_ik + w.kr * r.l_kr;
  if (!std::isfinite(r.l_all)) throw NonFiniteLoss("non-finite total loss");
  return r;
}

double learning_rate(const TrainConfig& c, int epoch) {
  if (epoch < 0) fail("epoch must be >= 0");
  return c.lr0 / std::pow(c.lr_decay_factor, epoch / c.lr_decay_every);
}

}  // namespace ccg
