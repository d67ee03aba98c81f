#include "diffe/networks.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace diffe {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Largest group count <= wanted that divides C.
int norm_groups(int C, int wanted) {
  for (int g = std::min(wanted, C); g > 1; --g)
    if (C % g == 0) return g;
  return 1;
}

int conv_padding(int kernel) { return (kernel - 1) / 2; }

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_ddpm: return "no_ddpm";
    case Ablation::no_ddpm_no_decoder: return "no_ddpm_no_decoder";
  }
  return "?";
}

std::string to_string(CaeTarget t) {
  return t == CaeTarget::residual_map ? "residual_map" : "reconstruct_x0";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_ddpm") return Ablation::no_ddpm;
  if (s == "no_ddpm_no_decoder") return Ablation::no_ddpm_no_decoder;
  throw ConfigError("unknown ablation '" + s + "' (expected full, no_ddpm, no_ddpm_no_decoder)");
}

CaeTarget cae_target_from_string(const std::string& s) {
  if (s == "residual_map") return CaeTarget::residual_map;
  if (s == "reconstruct_x0") return CaeTarget::reconstruct_x0;
  throw ConfigError("unknown cae_target '" + s + "' (expected residual_map, reconstruct_x0)");
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (n_classes < 2) throw ConfigError("model.n_classes must be >= 2");
  if (denoiser_base < 1) throw ConfigError("model.denoiser_base must be >= 1");
  if (denoiser_mults.size() < 2) throw ConfigError("model.denoiser_mults needs a stem and at least one stage");
  for (int m : denoiser_mults)
    if (m < 1) throw ConfigError("model.denoiser_mults entries must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw ConfigError("model.time_embed_dim must be even and >= 2");
  if (encoder_base < 1) throw ConfigError("model.encoder_base must be >= 1");
  if (latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
  if (decoder_widths.size() != 4) throw ConfigError("model.decoder_widths must list 4 stages");
  for (int w : decoder_widths)
    if (w < 1) throw ConfigError("model.decoder_widths entries must be >= 1");
  if (tap_channels < 1) throw ConfigError("model.tap_channels must be >= 1");
  if (classifier_hidden < 1) throw ConfigError("model.classifier_hidden must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("model.kernel must be odd");
  if (groups < 1) throw ConfigError("model.groups must be >= 1");
}

int NetworkConfig::encoder_width(int stage) const {
  if (stage < 3) return encoder_base << stage;
  return latent_dim;
}

Tensor ParamSet::add(const std::string& name, Shape shape, Rng& rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  Tensor t(shape, true);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  items_.push_back({name, t});
  return t;
}

Tensor ParamSet::add_constant(const std::string& name, Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value, true);
  items_.push_back({name, t});
  return t;
}

int ParamSet::count() const {
  int n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

Tensor sinusoidal_time_embedding(const std::vector<int>& t, int dim) {
  const int B = static_cast<int>(t.size());
  const int half = dim / 2;
  Tensor out({B, dim});
  auto ov = out.values();
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / std::max(1, half - 1));
      const double a = static_cast<double>(t[static_cast<size_t>(b)]) * freq;
      ov[static_cast<size_t>(b) * dim + j] = std::sin(a);
      ov[static_cast<size_t>(b) * dim + half + j] = std::cos(a);
    }
  }
  return out;
}

// --- DenoiserUNet ----------------------------------------------------------

DenoiserUNet::DenoiserUNet(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int K = cfg_.kernel;
  const int D = cfg_.time_embed_dim;
  temb_w1_ = params_.add("denoiser.temb.w1", {D, D}, rng, D);
  temb_b1_ = params_.add("denoiser.temb.b1", {D}, rng, D);
  temb_w2_ = params_.add("denoiser.temb.w2", {D, D}, rng, D);
  temb_b2_ = params_.add("denoiser.temb.b2", {D}, rng, D);

  auto make_stage = [&](const std::string& name, int cin, int cout, int stride, bool with_time) {
    Stage s;
    s.stride = stride;
    s.w = params_.add(name + ".w", {cout, cin, K}, rng, cin * K);
    s.b = params_.add(name + ".b", {cout}, rng, cin * K);
    s.gn_g = params_.add_constant(name + ".gn_g", {cout}, 1.0);
    s.gn_b = params_.add_constant(name + ".gn_b", {cout}, 0.0);
    if (with_time) {
      s.time_w = params_.add(name + ".time_w", {cout, D}, rng, D);
      s.time_b = params_.add(name + ".time_b", {cout}, rng, D);
    }
    return s;
  };

  const int depth = cfg_.denoiser_depth();
  stem_ = make_stage("denoiser.stem", cfg_.in_channels, cfg_.denoiser_width(0), 1, false);
  for (int i = 1; i <= depth; ++i)
    down_.push_back(make_stage("denoiser.down" + std::to_string(i), cfg_.denoiser_width(i - 1),
                               cfg_.denoiser_width(i), 2, true));
  mid_ = make_stage("denoiser.mid", cfg_.denoiser_width(depth), cfg_.denoiser_width(depth), 1, true);
  for (int i = 1; i <= depth; ++i) {
    const int skip_w = cfg_.denoiser_width(depth - i);
    const int in_w = cfg_.denoiser_width(depth - i + 1) + skip_w;
    up_.push_back(make_stage("denoiser.up" + std::to_string(i), in_w, skip_w, 1, true));
  }
  head_w_ = params_.add("denoiser.head.w", {cfg_.in_channels, cfg_.denoiser_width(0), K}, rng,
                        cfg_.denoiser_width(0) * K);
  head_b_ = params_.add("denoiser.head.b", {cfg_.in_channels}, rng, cfg_.denoiser_width(0) * K);
}

Tensor DenoiserUNet::stage_forward(const Stage& s, const Tensor& x, const Tensor& temb) const {
  Tensor h = conv1d(x, s.w, s.b, s.stride, conv_padding(cfg_.kernel));
  h = group_norm(h, s.gn_g, s.gn_b, norm_groups(h.dim(1), cfg_.groups));
  if (s.time_w.defined()) h = add_channel_bias(h, linear(temb, s.time_w, s.time_b));
  return silu(h);
}

DenoiserUNet::Output DenoiserUNet::forward(const Tensor& x_t, const std::vector<int>& t,
                                           const NoiseSchedule& schedule) const {
  if (x_t.ndim() != 3) throw DimensionError("denoise: expected [B,C,L], got " + shape_str(x_t.shape()));
  const int B = x_t.dim(0), L = x_t.dim(2);
  if (x_t.dim(1) != cfg_.in_channels)
    throw DimensionError("denoise: expected " + std::to_string(cfg_.in_channels) + " channels");
  if (static_cast<int>(t.size()) != B) throw DimensionError("denoise: need one stage per sample");
  for (int ti : t)
    if (ti < 1 || ti > schedule.T)
      throw IndexError("denoise: stage t=" + std::to_string(ti) + " outside [1," + std::to_string(schedule.T) +
                       "]");

  const int depth = cfg_.denoiser_depth();
  const int mult = 1 << depth;
  const int Lp = (L + mult - 1) / mult * mult;

  Tensor emb = sinusoidal_time_embedding(t, cfg_.time_embed_dim);
  emb = silu(linear(emb, temb_w1_, temb_b1_));
  emb = silu(linear(emb, temb_w2_, temb_b2_));

  Tensor h = stage_forward(stem_, pad_right(x_t, Lp), emb);
  std::vector<Tensor> skips{h};
  for (int i = 0; i < depth; ++i) {
    h = stage_forward(down_[static_cast<size_t>(i)], h, emb);
    if (i + 1 < depth) skips.push_back(h);
  }
  h = stage_forward(mid_, h, emb);

  Output out;
  for (int i = 0; i < depth; ++i) {
    const Tensor& skip = skips[static_cast<size_t>(depth - 1 - i)];
    h = crop_right(upsample2(h), skip.dim(2));
    h = stage_forward(up_[static_cast<size_t>(i)], concat_channels({h, skip}), emb);
    out.taps.push_back(h);
  }
  out.x0_hat = crop_right(conv1d(h, head_w_, head_b_, 1, conv_padding(cfg_.kernel)), L);
  return out;
}

// --- Encoder ----------------------------------------------------------------

Encoder::Encoder(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int K = cfg_.kernel;
  int cin = cfg_.in_channels;
  for (int i = 0; i < 4; ++i) {
    const int cout = cfg_.encoder_width(i);
    Stage s;
    const std::string name = "encoder.stage" + std::to_string(i + 1);
    s.w = params_.add(name + ".w", {cout, cin, K}, rng, cin * K);
    s.b = params_.add(name + ".b", {cout}, rng, cin * K);
    s.gn_g = params_.add_constant(name + ".gn_g", {cout}, 1.0);
    s.gn_b = params_.add_constant(name + ".gn_b", {cout}, 0.0);
    stages_.push_back(s);
    cin = cout;
  }
}

Encoder::Output Encoder::forward(const Tensor& x0) const {
  if (x0.ndim() != 3) throw DimensionError("encode: expected [B,C,L], got " + shape_str(x0.shape()));
  if (x0.dim(1) != cfg_.in_channels)
    throw DimensionError("encode: expected " + std::to_string(cfg_.in_channels) + " channels");
  Output out;
  Tensor h = x0;
  for (const Stage& s : stages_) {
    h = conv1d(h, s.w, s.b, 2, conv_padding(cfg_.kernel));
    h = group_norm(h, s.gn_g, s.gn_b, norm_groups(h.dim(1), cfg_.groups));
    h = silu(h);
    out.features.push_back(h);
  }
  out.z = reshape(adaptive_avg_pool1d(h, 1), {h.dim(0), cfg_.latent_dim});
  return out;
}

// --- Decoder ----------------------------------------------------------------

Decoder::Decoder(const NetworkConfig& cfg, bool use_ddpm_conditioning, Rng& rng)
    : cfg_(cfg), use_ddpm_conditioning_(use_ddpm_conditioning) {
  cfg_.validate();
  const int K = cfg_.kernel;
  // widths of the denoiser taps paired with up stages 0..2, deepest first
  const int depth = cfg_.denoiser_depth();
  int cin = cfg_.latent_dim;
  for (int i = 0; i < 4; ++i) {
    Stage s;
    const std::string name = "decoder.up" + std::to_string(i + 1);
    int in_w = cin;
    if (i < 3) {
      in_w += cfg_.encoder_width(2 - i);
      if (use_ddpm_conditioning_) {
        const int tap_src = cfg_.denoiser_width(std::max(0, depth - 1 - i));
        s.tap_w = params_.add(name + ".tap_w", {cfg_.tap_channels, tap_src, 1}, rng, tap_src);
        s.tap_b = params_.add(name + ".tap_b", {cfg_.tap_channels}, rng, tap_src);
        in_w += cfg_.tap_channels;
      }
    } else if (use_ddpm_conditioning_) {
      in_w += 2 * cfg_.in_channels;  // x0 and x0_hat enter the last stage
    }
    const int cout = cfg_.decoder_widths[static_cast<size_t>(i)];
    s.w = params_.add(name + ".w", {cout, in_w, K}, rng, in_w * K);
    s.b = params_.add(name + ".b", {cout}, rng, in_w * K);
    s.gn_g = params_.add_constant(name + ".gn_g", {cout}, 1.0);
    s.gn_b = params_.add_constant(name + ".gn_b", {cout}, 0.0);
    stages_.push_back(s);
    cin = cout;
  }
  const int last = cfg_.decoder_widths[3];
  head_w_ = params_.add("decoder.head.w", {cfg_.in_channels, last, K}, rng, last * K);
  head_b_ = params_.add("decoder.head.b", {cfg_.in_channels}, rng, last * K);
}

Tensor Decoder::forward(const std::vector<Tensor>& enc_features, const std::vector<Tensor>& ddpm_taps,
                        const Tensor& x0, const Tensor& x0_hat) const {
  if (enc_features.size() != 4) throw DimensionError("decode: expected 4 encoder features");
  if (use_ddpm_conditioning_) {
    if (ddpm_taps.size() != 3) throw DimensionError("decode: expected 3 denoiser taps");
    if (!x0.defined() || !x0_hat.defined()) throw DimensionError("decode: x0 and x0_hat required");
    if (x0.shape() != x0_hat.shape()) throw DimensionError("decode: x0 and x0_hat shapes differ");
  } else if (!ddpm_taps.empty()) {
    throw DimensionError("decode: this decoder is not conditioned on denoiser taps");
  }
  if (!x0.defined()) throw DimensionError("decode: x0 required for output length");

  Tensor h = enc_features[3];
  for (int i = 0; i < 3; ++i) {
    const Tensor& skip = enc_features[static_cast<size_t>(2 - i)];
    h = crop_right(upsample2(h), skip.dim(2));
    std::vector<Tensor> parts{h, skip};
    const Stage& s = stages_[static_cast<size_t>(i)];
    if (use_ddpm_conditioning_) {
      Tensor tap = adaptive_avg_pool1d(ddpm_taps[static_cast<size_t>(i)], skip.dim(2));
      parts.push_back(conv1d(tap, s.tap_w, s.tap_b, 1, 0));
    }
    h = conv1d(concat_channels(parts), s.w, s.b, 1, conv_padding(cfg_.kernel));
    h = group_norm(h, s.gn_g, s.gn_b, norm_groups(h.dim(1), cfg_.groups));
    h = silu(h);
  }
  h = crop_right(upsample2(h), x0.dim(2));
  const Stage& s3 = stages_[3];
  if (use_ddpm_conditioning_) h = concat_channels({h, x0, x0_hat});
  h = conv1d(h, s3.w, s3.b, 1, conv_padding(cfg_.kernel));
  h = group_norm(h, s3.gn_g, s3.gn_b, norm_groups(h.dim(1), cfg_.groups));
  h = silu(h);
  return conv1d(h, head_w_, head_b_, 1, conv_padding(cfg_.kernel));
}

// --- Classifier ---------------------------------------------------------------

Classifier::Classifier(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  w1_ = params_.add("classifier.l1.w", {cfg_.classifier_hidden, cfg_.latent_dim}, rng, cfg_.latent_dim);
  b1_ = params_.add("classifier.l1.b", {cfg_.classifier_hidden}, rng, cfg_.latent_dim);
  w2_ = params_.add("classifier.l2.w", {cfg_.n_classes, cfg_.classifier_hidden}, rng, cfg_.classifier_hidden);
  b2_ = params_.add("classifier.l2.b", {cfg_.n_classes}, rng, cfg_.classifier_hidden);
}

Tensor Classifier::forward(const Tensor& z) const {
  if (z.ndim() != 2 || z.dim(1) != cfg_.latent_dim)
    throw DimensionError("classify: expected z [B," + std::to_string(cfg_.latent_dim) + "], got " +
                         shape_str(z.shape()));
  return linear(silu(linear(z, w1_, b1_)), w2_, b2_);
}

// --- DiffEModel ---------------------------------------------------------------

DiffEModel DiffEModel::build(const NetworkConfig& cfg, Ablation ablation, std::uint64_t init_seed) {
  cfg.validate();
  // initialization order is stable: denoiser, encoder, decoder, classifier
  Rng rng(mix_seed(init_seed, 0x6e657473));
  std::optional<DenoiserUNet> denoiser;
  if (ablation == Ablation::full) denoiser.emplace(cfg, rng);
  Encoder encoder(cfg, rng);
  std::optional<Decoder> decoder;
  if (ablation != Ablation::no_ddpm_no_decoder) decoder.emplace(cfg, ablation == Ablation::full, rng);
  Classifier classifier(cfg, rng);
  return DiffEModel{cfg, ablation, std::move(denoiser), std::move(encoder), std::move(decoder),
                    std::move(classifier)};
}

std::vector<NamedParam> DiffEModel::all_parameters() const {
  std::vector<NamedParam> out = denoiser_parameters();
  const auto joint = joint_parameters();
  out.insert(out.end(), joint.begin(), joint.end());
  return out;
}

std::vector<NamedParam> DiffEModel::denoiser_parameters() const {
  return denoiser ? denoiser->parameters() : std::vector<NamedParam>{};
}

std::vector<NamedParam> DiffEModel::joint_parameters() const {
  std::vector<NamedParam> out = encoder.parameters();
  if (decoder) {
    const auto& d = decoder->parameters();
    out.insert(out.end(), d.begin(), d.end());
  }
  const auto& c = classifier.parameters();
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

int DiffEModel::param_count() const {
  int n = 0;
  for (const auto& p : all_parameters()) n += p.tensor.numel();
  return n;
}

Tensor DiffEModel::infer_scores(const Tensor& x0) const {
  NoGradGuard guard;
  return classifier.forward(encoder.forward(x0).z);
}

// --- checkpoint io --------------------------------------------------------------

namespace {

ordered_json network_config_to_json(const NetworkConfig& c) {
  ordered_json j;
  j["in_channels"] = c.in_channels;
  j["n_classes"] = c.n_classes;
  j["denoiser_base"] = c.denoiser_base;
  j["denoiser_mults"] = c.denoiser_mults;
  j["time_embed_dim"] = c.time_embed_dim;
  j["encoder_base"] = c.encoder_base;
  j["latent_dim"] = c.latent_dim;
  j["decoder_widths"] = c.decoder_widths;
  j["tap_channels"] = c.tap_channels;
  j["classifier_hidden"] = c.classifier_hidden;
  j["kernel"] = c.kernel;
  j["groups"] = c.groups;
  return j;
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.denoiser_base = j.at("denoiser_base").get<int>();
    c.denoiser_mults = j.at("denoiser_mults").get<std::vector<int>>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.encoder_base = j.at("encoder_base").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    c.tap_channels = j.at("tap_channels").get<int>();
    c.classifier_hidden = j.at("classifier_hidden").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.groups = j.at("groups").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad architecture config: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const DiffEModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  ordered_json h;
  h["format_version"] = kCheckpointFormatVersion;
  h["kind"] = "diffe-checkpoint";
  h["ablation"] = to_string(model.ablation);
  h["config"] = network_config_to_json(model.config);
  ordered_json params = ordered_json::array();
  const auto all = model.all_parameters();
  for (const auto& p : all) params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  h["params"] = std::move(params);
  const std::string header = h.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  for (const auto& p : all) {
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DiffEModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
  }
  if (h.value("kind", "") != "diffe-checkpoint") throw FormatError(path.string() + ": not a diffe checkpoint");
  const int version = h.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw FormatError(path.string() + ": unsupported format_version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointFormatVersion));

  DiffEModel model = DiffEModel::build(network_config_from_json(h.at("config")),
                                       ablation_from_string(h.value("ablation", "full")), 0);
  auto all = model.all_parameters();
  const auto& plist = h.at("params");
  if (plist.size() != all.size())
    throw FormatError(path.string() + ": header lists " + std::to_string(plist.size()) + " parameters, model has " +
                      std::to_string(all.size()));
  for (size_t i = 0; i < all.size(); ++i) {
    const std::string name = plist[i].value("name", "");
    const auto shape = plist[i].at("shape").get<Shape>();
    if (name != all[i].name || shape != all[i].tensor.shape())
      throw FormatError(path.string() + ": parameter " + std::to_string(i) + " is " + name +
                        ", model expects " + all[i].name);
    auto v = all[i].tensor.values();
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    const auto got = static_cast<size_t>(in.gcount());
    if (got != v.size() * sizeof(double))
      throw FormatError(path.string() + ": truncated payload at " + name + ", expected " +
                        std::to_string(v.size() * sizeof(double)) + " bytes, got " + std::to_string(got));
    check_finite(v, "checkpoint parameter");
  }
  return model;
}

}  // namespace diffe
