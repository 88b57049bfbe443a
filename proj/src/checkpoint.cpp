#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "metaqa/errors.hpp"
#include "metaqa/harness.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint payload is stored little-endian");

namespace metaqa {

using nlohmann::json;

namespace {

json encoder_json(const EncoderConfig& c) {
  return {{"hidden", c.hidden},   {"layers", c.layers},   {"heads", c.heads},       {"ffn", c.ffn},
          {"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"dropout", c.dropout}, {"seed", c.seed},
          {"init_std", c.init_std}, {"ln_eps", c.ln_eps}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.dropout = j.at("dropout");
  c.seed = j.at("seed");
  c.init_std = j.at("init_std");
  c.ln_eps = j.at("ln_eps");
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const MetaQAModel& m = ckpt.model;
  json header;
  header["format"] = Checkpoint::kFormat;
  header["encoder"] = encoder_json(m.encoder.config);
  header["flags"] = {{"disable_conf_emb", m.flags.disable_conf_emb}, {"detach_agsen", m.flags.detach_agsen}};
  header["agents"] = m.registry.agents;
  header["agent_domains"] = m.registry.home_domain;
  header["vocab"] = m.vocab.tokens();
  header["theta"] = ckpt.theta;
  json dev = json::array();
  for (const auto& p : ckpt.meta.dev_curve) dev.push_back({{"step", p.step}, {"selection_accuracy", p.selection_accuracy}});
  header["train"] = {{"seed", ckpt.meta.seed},
                     {"steps", ckpt.meta.steps},
                     {"examples", ckpt.meta.examples},
                     {"config_hash", ckpt.meta.config_hash},
                     {"config", ckpt.meta.config},
                     {"loss_curve", ckpt.meta.loss_curve},
                     {"dev_curve", dev}};
  json tensors = json::array();
  std::size_t count = 0;
  for (const Parameter* p : m.parameters()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    count += p->value.size();
  }
  header["tensors"] = tensors;
  header["payload_bytes"] = count * sizeof(double);

  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t offset = out.size();
  out.resize(offset + count * sizeof(double));
  char* dst = out.data() + offset;
  for (const Parameter* p : m.parameters()) {
    const auto data = p->value.data();
    std::memcpy(dst, data.data(), data.size_bytes());
    dst += data.size_bytes();
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw CheckpointError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unreadable header: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    if (header.at("format").get<std::string>() != Checkpoint::kFormat) {
      throw CheckpointError("checkpoint: unsupported format '" + header.at("format").get<std::string>() + "'");
    }
    EncoderConfig enc = encoder_from(header.at("encoder"));
    ModelFlags flags;
    flags.disable_conf_emb = header.at("flags").at("disable_conf_emb");
    flags.detach_agsen = header.at("flags").at("detach_agsen");
    AgentRegistry registry;
    registry.agents = header.at("agents").get<std::vector<std::string>>();
    registry.home_domain = header.value("agent_domains", std::map<std::string, std::string>{});
    Vocab vocab(header.at("vocab").get<std::vector<std::string>>());
    if (vocab.size() != enc.vocab_size) throw CheckpointError("checkpoint: vocabulary size does not match encoder");
    enc.validate();
    std::mt19937_64 rng(0);
    ckpt.model = MetaQAModel::init(enc, std::move(vocab), std::move(registry), flags, rng);
    ckpt.theta = header.value("theta", 0.7);

    const json& t = header.at("train");
    ckpt.meta.seed = t.at("seed");
    ckpt.meta.steps = t.at("steps");
    ckpt.meta.examples = t.at("examples");
    ckpt.meta.config_hash = t.at("config_hash");
    ckpt.meta.config = t.at("config");
    ckpt.meta.loss_curve = t.at("loss_curve").get<std::vector<double>>();
    for (const auto& p : t.at("dev_curve")) ckpt.meta.dev_curve.push_back({p.at("step"), p.at("selection_accuracy")});

    auto params = ckpt.model.parameters();
    const json& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
      throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) + " tensors, header lists " +
                            std::to_string(tensors.size()));
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = tensors[i].at("name").get<std::string>();
      const auto shape = tensors[i].at("shape").get<Shape>();
      if (name != params[i]->name || shape != params[i]->value.shape()) {
        throw CheckpointError("checkpoint: tensor " + std::to_string(i) + " ('" + name +
                              "') does not match the model layout");
      }
      count += params[i]->value.size();
    }
    const std::size_t payload = bytes.size() - nl - 1;
    if (header.at("payload_bytes").get<std::size_t>() != count * sizeof(double) || payload != count * sizeof(double)) {
      throw CheckpointError("checkpoint: payload holds " + std::to_string(payload) + " bytes, expected " +
                            std::to_string(count * sizeof(double)));
    }
    const char* src = bytes.data() + nl + 1;
    for (Parameter* p : params) {
      auto data = p->value.data();
      std::memcpy(data.data(), src, data.size_bytes());
      src += data.size_bytes();
      p->zero_grad();
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace metaqa
