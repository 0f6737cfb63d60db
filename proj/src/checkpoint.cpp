#include "dolfin/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <fmt/format.h>

#include "dolfin/error.hpp"
#include "dolfin/fs_util.hpp"

namespace dolfin {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blocks assume a little-endian host");

constexpr const char* kMagic = "dolfin-checkpoint 1";

using KeyValues = std::map<std::string, std::string>;

struct Block {
  std::string name;
  std::string dtype;  // f32, f64 or u8
  std::size_t count = 0;
  std::size_t offset = 0;
};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  if (dtype == "u8") return 1;
  throw Error(ErrorKind::parse, fmt::format("unknown block dtype '{}'", dtype));
}

class Writer {
 public:
  void section(const std::string& name, const KeyValues& kv) {
    manifest_ += fmt::format("[{}]\n", name);
    for (const auto& [k, v] : kv) manifest_ += fmt::format("{} = {}\n", k, v);
  }

  template <class T>
  void block(const std::string& name, const std::string& dtype, const std::vector<T>& values) {
    const std::size_t bytes = values.size() * sizeof(T);
    blocks_.push_back({name, dtype, values.size(), data_.size()});
    const auto* p = reinterpret_cast<const char*>(values.data());
    data_.append(p, bytes);
  }

  std::string finish() const {
    std::string out = std::string(kMagic) + "\n" + manifest_ + "[blocks]\n";
    for (const auto& b : blocks_) out += fmt::format("{} {} {} {}\n", b.name, b.dtype, b.count, b.offset);
    out += "end\n";
    return out + data_;
  }

 private:
  std::string manifest_;
  std::vector<Block> blocks_;
  std::string data_;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Parsed {
  std::map<std::string, KeyValues> sections;
  std::map<std::string, Block> blocks;
  std::string_view data;

  const KeyValues& section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw Error(ErrorKind::parse, fmt::format("checkpoint has no [{}] section", name));
    return it->second;
  }

  template <class T>
  std::vector<T> read(const std::string& name, const std::string& dtype, bool required = true) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) {
      if (required) throw Error(ErrorKind::parse, fmt::format("checkpoint has no '{}' block", name));
      return {};
    }
    const Block& b = it->second;
    if (b.dtype != dtype) {
      throw Error(ErrorKind::parse, fmt::format("block '{}' has dtype {}, expected {}", name, b.dtype, dtype));
    }
    std::vector<T> out(b.count);
    std::memcpy(out.data(), data.data() + b.offset, b.count * sizeof(T));
    return out;
  }
};

Parsed parse(const std::string& bytes) {
  Parsed p;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw Error(ErrorKind::parse, "checkpoint manifest is truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (bytes.rfind(kMagic, 0) != 0 || next_line() != kMagic) {
    throw Error(ErrorKind::parse, "not a dolfin checkpoint (bad magic line)");
  }
  std::string current;
  std::vector<Block> blocks;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      p.sections[current];
      continue;
    }
    if (current == "blocks") {
      std::istringstream in(line);
      Block b;
      if (!(in >> b.name >> b.dtype >> b.count >> b.offset)) {
        throw Error(ErrorKind::parse, fmt::format("malformed block entry '{}'", line));
      }
      blocks.push_back(b);
      continue;
    }
    const auto eq = line.find('=');
    if (current.empty() || eq == std::string::npos) {
      throw Error(ErrorKind::parse, fmt::format("malformed manifest line '{}'", line));
    }
    p.sections[current][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  p.data = std::string_view(bytes).substr(pos);
  for (const auto& b : blocks) {
    const std::size_t size = b.count * dtype_size(b.dtype);
    if (b.offset > p.data.size() || size > p.data.size() - b.offset) {
      throw Error(ErrorKind::parse, fmt::format("block '{}' runs past the end of the file", b.name));
    }
    p.blocks[b.name] = b;
  }
  return p;
}

std::int64_t parse_i64(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorKind::parse, fmt::format("checkpoint is missing '{}'", key));
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorKind::parse, fmt::format("malformed value for '{}'", key));
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& s) {
  Writer w;
  w.section("model", s.model.to_kv());
  w.section("dataset", dataset_to_kv(s.dataset));
  w.section("train", s.train.to_kv());
  KeyValues state{{"step", std::to_string(s.step)},
                  {"adam_steps", std::to_string(s.optimizer.steps())},
                  {"diffusion_steps", std::to_string(s.schedule.T)},
                  {"schedule", "linear"},
                  {"adapter_token_dim", std::to_string(s.adapter.token_dim())},
                  {"adapter_latent_dim", std::to_string(s.adapter.latent_dim())}};
  w.section("state", state);
  w.block("params", "f32", s.params.values);
  w.block("adam.m", "f32", s.optimizer.first_moment());
  w.block("adam.v", "f32", s.optimizer.second_moment());
  if (!s.ema.empty()) w.block("ema", "f32", s.ema);
  if (s.adapter.enabled()) w.block("adapter", "f64", s.adapter.values());
  w.block("schedule.beta", "f64", s.schedule.beta);
  const std::string rng = s.rng.state();
  w.block("rng", "u8", std::vector<char>(rng.begin(), rng.end()));
  return w.finish();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const Parsed p = parse(bytes);
  Checkpoint s;
  s.model = ModelConfig::from_kv(p.section("model"));
  s.dataset = dataset_from_kv(p.section("dataset"));
  s.train = TrainConfig::from_kv(p.section("train"));
  const KeyValues& state = p.section("state");
  s.step = parse_i64(state, "step");
  if (auto it = state.find("schedule"); it == state.end() || it->second != "linear") {
    throw Error(ErrorKind::parse, "unsupported schedule kind in checkpoint");
  }
  s.schedule = Schedule::from_betas(p.read<double>("schedule.beta", "f64"));
  if (s.schedule.T != parse_i64(state, "diffusion_steps")) {
    throw Error(ErrorKind::parse, "schedule length disagrees with diffusion_steps");
  }

  auto [table, slots] = denoiser_layout(s.model);
  s.params.config = s.model;
  s.params.table = std::move(table);
  s.params.slots = std::move(slots);
  s.params.values = p.read<float>("params", "f32");
  if (s.params.values.size() != s.params.table.total()) {
    throw Error(ErrorKind::shape, fmt::format("checkpoint has {} parameters, the model needs {}",
                                              s.params.values.size(), s.params.table.total()));
  }
  s.optimizer = AdamW<float>(AdamWConfig{.lr = s.train.lr,
                                         .beta1 = s.train.beta1,
                                         .beta2 = s.train.beta2,
                                         .eps = 1e-8,
                                         .weight_decay = s.train.weight_decay},
                             s.params.values.size());
  s.optimizer.first_moment() = p.read<float>("adam.m", "f32");
  s.optimizer.second_moment() = p.read<float>("adam.v", "f32");
  if (s.optimizer.first_moment().size() != s.params.values.size() ||
      s.optimizer.second_moment().size() != s.params.values.size()) {
    throw Error(ErrorKind::shape, "optimizer moments do not match the parameter count");
  }
  s.optimizer.set_steps(parse_i64(state, "adam_steps"));
  s.ema = p.read<float>("ema", "f32", false);
  if (!s.ema.empty() && s.ema.size() != s.params.values.size()) {
    throw Error(ErrorKind::shape, "EMA buffer does not match the parameter count");
  }
  const auto latent = static_cast<int>(parse_i64(state, "adapter_latent_dim"));
  if (latent > 0) {
    s.adapter = MlpAdapter::from_values(static_cast<int>(parse_i64(state, "adapter_token_dim")), latent,
                                        p.read<double>("adapter", "f64"));
  }
  const auto rng = p.read<char>("rng", "u8");
  s.rng.set_state(std::string(rng.begin(), rng.end()));
  return s;
}

void save_checkpoint(const std::string& path, const Checkpoint& state) {
  atomic_write(path, serialize_checkpoint(state));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace dolfin
