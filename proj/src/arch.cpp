#include "arch.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace s3nas {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void SuperkernelSpec::validate() const {
  if (kernel_sizes.empty()) {
    throw InvariantError("superkernel has no candidate kernel sizes");
  }
  if (expansion_ratios.empty()) {
    throw InvariantError("superkernel has no candidate expansion ratios");
  }
  for (std::size_t i = 0; i < kernel_sizes.size(); ++i) {
    const int k = kernel_sizes[i];
    if (k < 1 || k % 2 == 0) {
      throw InvariantError("kernel size " + std::to_string(k) + " must be odd and >= 1");
    }
    if (i > 0 && kernel_sizes[i - 1] >= k) {
      throw InvariantError("kernel sizes must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i < expansion_ratios.size(); ++i) {
    const double e = expansion_ratios[i];
    if (e < 0.0) {
      throw InvariantError("expansion ratio must be non-negative");
    }
    if (i > 0 && expansion_ratios[i - 1] >= e) {
      throw InvariantError("expansion ratios must be strictly increasing");
    }
  }
}

std::string to_string(BlockKind kind) {
  return kind == BlockKind::MixconvMbconv ? "mixconv-mbconv" : "fused-conv";
}

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "mixconv-mbconv") return BlockKind::MixconvMbconv;
  if (s == "fused-conv") return BlockKind::FusedConv;
  throw ConfigError("unknown block kind '" + s + "'");
}

void BlockSpec::validate() const {
  if (superkernels.empty()) {
    throw InvariantError("block must have at least one superkernel");
  }
  int kernels_of_7 = 0;
  for (const auto& sk : superkernels) {
    sk.validate();
    if (std::find(sk.kernel_sizes.begin(), sk.kernel_sizes.end(), 7) != sk.kernel_sizes.end()) {
      ++kernels_of_7;
    }
    // Expansion ratios must land on integral channel counts.
    for (double e : sk.expansion_ratios) {
      const double channels = e * input_width;
      if (channels != std::floor(channels)) {
        throw InvariantError("expansion ratio " + format_number(e) + " on width " +
                             std::to_string(input_width) + " gives a fractional channel count");
      }
    }
  }
  if (kernels_of_7 > 1) {
    throw InvariantError("at most one superkernel per block may list kernel size 7");
  }
  if (input_width <= 0 || output_width <= 0) {
    throw InvariantError("block widths must be positive");
  }
  if (stride != 1 && stride != 2) {
    throw InvariantError("block stride must be 1 or 2");
  }
}

void StageSpec::validate() const {
  if (width <= 0) throw InvariantError("stage width must be positive");
  if (depth <= 0) throw InvariantError("stage depth must be positive");
  if (static_cast<int>(blocks.size()) != depth) {
    throw InvariantError("stage block list length does not match depth");
  }
  for (const auto& block : blocks) {
    block.validate();
    if (block.output_width != width) {
      throw InvariantError("all blocks in a stage must produce the stage width");
    }
  }
}

void SupernetSpec::validate() const {
  if (stages.empty()) throw InvariantError("supernet has no stages");
  if (stem.width <= 0 || stem.kernel < 1 || stem.kernel % 2 == 0) {
    throw InvariantError("stem must have positive width and odd kernel");
  }
  if (input_resolution <= 0) throw InvariantError("input resolution must be positive");
  if (head.feature_width <= 0 || head.num_classes <= 0) {
    throw InvariantError("head widths must be positive");
  }
  int prev_width = stem.width;
  for (const auto& stage : stages) {
    stage.validate();
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      const auto& block = stage.blocks[b];
      const int expect_in = b == 0 ? prev_width : stage.width;
      const int expect_stride = b == 0 ? stage.stride : 1;
      if (block.input_width != expect_in) {
        throw InvariantError("block input width does not chain with previous widths");
      }
      if (block.stride != expect_stride) {
        throw InvariantError("only the first block of a stage may take the stage stride");
      }
    }
    prev_width = stage.width;
  }
  if (!validate_linear_depth(*this).is_monotone) {
    throw InvariantError("cumulative depth must be non-decreasing in stage width");
  }
}

int SupernetSpec::total_blocks() const {
  int n = 0;
  for (const auto& stage : stages) n += stage.depth;
  return n;
}

const BlockSpec& SupernetSpec::block_at(int index) const {
  int i = index;
  for (const auto& stage : stages) {
    if (i < stage.depth) return stage.blocks[i];
    i -= stage.depth;
  }
  throw InvariantError("block index " + std::to_string(index) + " out of range");
}

int SupernetSpec::total_stride() const {
  int s = stem.stride;
  for (const auto& stage : stages) s *= stage.stride;
  return s;
}

// ---------------------------------------------------------------------------
// Default supernet (Table-4 topology)
// ---------------------------------------------------------------------------

namespace {

BlockSpec make_search_block(int input_width, int output_width, int stride,
                            const std::vector<double>& expansions, bool allow_7) {
  BlockSpec block;
  block.input_width = input_width;
  block.output_width = output_width;
  block.stride = stride;
  block.kind = BlockKind::MixconvMbconv;
  for (int j = 0; j < 3; ++j) {
    SuperkernelSpec sk;
    sk.kernel_sizes = (j == 0 && allow_7) ? std::vector<int>{3, 5, 7} : std::vector<int>{3, 5};
    sk.expansion_ratios = expansions;
    block.superkernels.push_back(std::move(sk));
  }
  return block;
}

}  // namespace

SupernetSpec build_default_supernet(int num_classes) {
  SupernetSpec spec;
  spec.stem = StemSpec{7, 2, 32};
  spec.head = HeadSpec{1280, num_classes};
  spec.input_resolution = 224;
  spec.input_channels = 3;

  const int widths[5] = {32, 64, 128, 160, 256};
  const int depths[5] = {3, 4, 7, 4, 11};
  const int strides[5] = {2, 2, 2, 1, 2};
  const std::vector<double> expansions{0.0, 2.0};

  int prev_width = spec.stem.width;
  for (int s = 0; s < 5; ++s) {
    StageSpec stage;
    stage.width = widths[s];
    stage.depth = depths[s];
    stage.stride = strides[s];
    for (int b = 0; b < depths[s]; ++b) {
      const int in = b == 0 ? prev_width : widths[s];
      const int stride = b == 0 ? strides[s] : 1;
      stage.blocks.push_back(make_search_block(in, widths[s], stride, expansions, true));
    }
    spec.stages.push_back(std::move(stage));
    prev_width = widths[s];
  }
  spec.validate();
  return spec;
}

LinearDepthReport validate_linear_depth(const SupernetSpec& supernet) {
  LinearDepthReport report;
  int cumulative = 0;
  for (const auto& stage : supernet.stages) {
    cumulative += stage.depth;
    report.rows.push_back({stage.width, cumulative,
                           static_cast<double>(cumulative) / stage.width});
  }
  auto rows = report.rows;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.width < b.width; });
  report.is_monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].cumulative_depth < rows[i - 1].cumulative_depth) {
      report.is_monotone = false;
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Canonical configurations
// ---------------------------------------------------------------------------

double CanonicalConfig::total_expansion() const {
  double total = 0.0;
  for (const auto& b : branches) total += b.expansion;
  return total;
}

std::string CanonicalConfig::id() const {
  std::string out;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (i > 0) out += '+';
    out += std::to_string(branches[i].kernel);
    out += ':';
    out += format_number(branches[i].expansion);
  }
  return out;
}

CanonicalConfig CanonicalConfig::parse(const std::string& id) {
  CanonicalConfig config;
  if (id.empty()) return config;
  std::size_t pos = 0;
  while (pos <= id.size()) {
    const std::size_t plus = id.find('+', pos);
    const std::string part = id.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos);
    const std::size_t colon = part.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("malformed config id '" + id + "'");
    }
    BranchDecision b;
    b.kernel = static_cast<int>(parse_int(part.substr(0, colon), "config id"));
    b.expansion = parse_double(part.substr(colon + 1), "config id");
    config.branches.push_back(b);
    if (plus == std::string::npos) break;
    pos = plus + 1;
  }
  // Reject non-canonical ids: unsorted, duplicated kernels, zero expansions.
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    if (config.branches[i].expansion <= 0.0) {
      throw InvariantError("config id '" + id + "' is not canonical: zero expansion");
    }
    if (i > 0 && config.branches[i - 1].kernel >= config.branches[i].kernel) {
      throw InvariantError("config id '" + id + "' is not canonical: kernels not strictly ascending");
    }
  }
  return config;
}

CanonicalConfig canonicalize_unchecked(const Decision& decision) {
  std::map<int, double> merged;
  for (const auto& d : decision) {
    if (d.expansion > 0.0) merged[d.kernel] += d.expansion;
  }
  CanonicalConfig config;
  for (const auto& [k, e] : merged) config.branches.push_back({k, e});
  return config;
}

CanonicalConfig canonicalize(const BlockSpec& block, const Decision& decision) {
  if (decision.size() != block.superkernels.size()) {
    throw InvariantError("decision length does not match superkernel count");
  }
  for (std::size_t j = 0; j < decision.size(); ++j) {
    const auto& sk = block.superkernels[j];
    const auto& d = decision[j];
    if (std::find(sk.kernel_sizes.begin(), sk.kernel_sizes.end(), d.kernel) ==
        sk.kernel_sizes.end()) {
      throw InvariantError("kernel size " + std::to_string(d.kernel) +
                           " not a candidate of superkernel " + std::to_string(j));
    }
    if (std::find(sk.expansion_ratios.begin(), sk.expansion_ratios.end(), d.expansion) ==
        sk.expansion_ratios.end()) {
      throw InvariantError("expansion ratio " + format_number(d.expansion) +
                           " not a candidate of superkernel " + std::to_string(j));
    }
  }
  CanonicalConfig config = canonicalize_unchecked(decision);
  double representable = 0.0;
  for (const auto& sk : block.superkernels) representable += sk.max_expansion();
  for (const auto& b : config.branches) {
    if (b.expansion > representable) {
      throw InvariantError("merged expansion " + format_number(b.expansion) +
                           " exceeds representable maximum " + format_number(representable));
    }
  }
  return config;
}

std::vector<CanonicalConfig> enumerate_configs(const BlockSpec& block) {
  block.validate();
  std::set<CanonicalConfig> seen;
  Decision decision(block.superkernels.size());
  // Depth-first product over every superkernel's candidate pairs.
  auto recurse = [&](auto&& self, std::size_t j) -> void {
    if (j == block.superkernels.size()) {
      CanonicalConfig config = canonicalize_unchecked(decision);
      if (config.is_skip() && !block.can_skip()) return;
      seen.insert(std::move(config));
      return;
    }
    for (int k : block.superkernels[j].kernel_sizes) {
      for (double e : block.superkernels[j].expansion_ratios) {
        decision[j] = {k, e};
        self(self, j + 1);
      }
    }
  };
  recurse(recurse, 0);
  return {seen.begin(), seen.end()};
}

// ---------------------------------------------------------------------------
// Concrete architectures
// ---------------------------------------------------------------------------

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "h-swish"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "h-swish") return Activation::HSwish;
  throw ConfigError("unknown activation '" + s + "'");
}

int ConcreteArchitecture::total_blocks() const {
  int n = 0;
  for (const auto& stage : stages) n += static_cast<int>(stage.blocks.size());
  return n;
}

int ConcreteArchitecture::total_stride() const {
  int s = stem.stride;
  for (const auto& stage : stages) s *= stage.stride;
  return s;
}

std::vector<ConcreteArchitecture::BlockRef> ConcreteArchitecture::flat_blocks() const {
  std::vector<BlockRef> refs;
  int prev_width = stem.width;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& stage = stages[s];
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      BlockRef ref;
      ref.block = &stage.blocks[b];
      ref.stage_index = static_cast<int>(s);
      ref.input_width = b == 0 ? prev_width : stage.width;
      ref.output_width = stage.width;
      ref.stride = b == 0 ? stage.stride : 1;
      refs.push_back(ref);
    }
    prev_width = stage.width;
  }
  return refs;
}

void ConcreteArchitecture::validate() const {
  if (version != 1) throw InvariantError("unsupported architecture version");
  if (input_resolution <= 0) throw InvariantError("input resolution must be positive");
  if (stages.empty()) throw InvariantError("architecture has no stages");
  if (stem.width <= 0 || stem.kernel < 1 || stem.kernel % 2 == 0) {
    throw InvariantError("stem must have positive width and odd kernel");
  }
  if (head.feature_width <= 0 || head.num_classes <= 0) {
    throw InvariantError("head widths must be positive");
  }
  for (const auto& ref : flat_blocks()) {
    const auto& config = ref.block->config;
    for (std::size_t i = 0; i < config.branches.size(); ++i) {
      const auto& br = config.branches[i];
      if (br.kernel < 1 || br.kernel % 2 == 0) {
        throw InvariantError("block kernel sizes must be odd and >= 1");
      }
      if (br.expansion <= 0.0) {
        throw InvariantError("canonical block decisions must have positive expansion");
      }
      const double channels = br.expansion * ref.input_width;
      if (channels != std::floor(channels)) {
        throw InvariantError("expansion gives fractional channel count");
      }
      if (i > 0 && config.branches[i - 1].kernel >= br.kernel) {
        throw InvariantError("block kernels must be strictly ascending");
      }
    }
    if (config.is_skip() && (ref.stride != 1 || ref.input_width != ref.output_width)) {
      throw InvariantError("skip block requires stride 1 and matching widths");
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

void require_keys(const ordered_json& j, const std::vector<std::string>& keys,
                  const std::string& what) {
  for (const auto& key : keys) {
    if (!j.contains(key)) {
      throw ConfigError("missing key '" + key + "' in " + what);
    }
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown key '" + key + "' in " + what);
    }
  }
}

ordered_json stem_to_json(const StemSpec& stem) {
  ordered_json j;
  j["kernel"] = stem.kernel;
  j["stride"] = stem.stride;
  j["width"] = stem.width;
  return j;
}

StemSpec stem_from_json(const ordered_json& j) {
  require_keys(j, {"kernel", "stride", "width"}, "stem");
  return StemSpec{j["kernel"].get<int>(), j["stride"].get<int>(), j["width"].get<int>()};
}

ordered_json head_to_json(const HeadSpec& head) {
  ordered_json j;
  j["feature_width"] = head.feature_width;
  j["num_classes"] = head.num_classes;
  return j;
}

HeadSpec head_from_json(const ordered_json& j) {
  require_keys(j, {"feature_width", "num_classes"}, "head");
  return HeadSpec{j["feature_width"].get<int>(), j["num_classes"].get<int>()};
}

ordered_json parse_json(const std::string& text, const std::string& what) {
  try {
    return ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError("malformed " + what + ": " + e.what());
  }
}

}  // namespace

std::string serialize_architecture(const ConcreteArchitecture& arch) {
  ordered_json j;
  j["version"] = arch.version;
  j["input_resolution"] = arch.input_resolution;
  j["activation"] = to_string(arch.activation);
  j["stem"] = stem_to_json(arch.stem);
  j["stages"] = ordered_json::array();
  for (const auto& stage : arch.stages) {
    ordered_json js;
    js["width"] = stage.width;
    js["stride"] = stage.stride;
    js["blocks"] = ordered_json::array();
    for (const auto& block : stage.blocks) {
      ordered_json jb;
      jb["kernels"] = ordered_json::array();
      jb["expansions"] = ordered_json::array();
      for (const auto& br : block.config.branches) {
        jb["kernels"].push_back(br.kernel);
        jb["expansions"].push_back(br.expansion);
      }
      jb["se"] = block.se_enabled;
      js["blocks"].push_back(std::move(jb));
    }
    j["stages"].push_back(std::move(js));
  }
  j["head"] = head_to_json(arch.head);
  return j.dump(2) + "\n";
}

ConcreteArchitecture deserialize_architecture(const std::string& text,
                                              const SupernetSpec* supernet) {
  const ordered_json j = parse_json(text, "architecture file");
  require_keys(j, {"version", "input_resolution", "activation", "stem", "stages", "head"},
               "architecture file");
  ConcreteArchitecture arch;
  arch.version = j["version"].get<int>();
  if (arch.version != 1) {
    throw ConfigError("unknown architecture file version " + std::to_string(arch.version));
  }
  arch.input_resolution = j["input_resolution"].get<int>();
  arch.activation = activation_from_string(j["activation"].get<std::string>());
  arch.stem = stem_from_json(j["stem"]);
  for (const auto& js : j["stages"]) {
    require_keys(js, {"width", "stride", "blocks"}, "stage");
    ConcreteStage stage;
    stage.width = js["width"].get<int>();
    stage.stride = js["stride"].get<int>();
    for (const auto& jb : js["blocks"]) {
      require_keys(jb, {"kernels", "expansions", "se"}, "block");
      ConcreteBlock block;
      const auto& kernels = jb["kernels"];
      const auto& expansions = jb["expansions"];
      if (kernels.size() != expansions.size()) {
        throw ConfigError("kernels[] and expansions[] must have equal length");
      }
      for (std::size_t i = 0; i < kernels.size(); ++i) {
        block.config.branches.push_back(
            {kernels[i].get<int>(), expansions[i].get<double>()});
      }
      block.se_enabled = jb["se"].get<bool>();
      stage.blocks.push_back(std::move(block));
    }
    arch.stages.push_back(std::move(stage));
  }
  arch.head = head_from_json(j["head"]);
  arch.validate();
  if (supernet != nullptr) {
    if (arch.total_blocks() != supernet->total_blocks()) {
      throw InvariantError("architecture block count does not match supernet");
    }
    const auto refs = arch.flat_blocks();
    for (int i = 0; i < arch.total_blocks(); ++i) {
      const auto& spec_block = supernet->block_at(i);
      const auto configs = enumerate_configs(spec_block);
      if (std::find(configs.begin(), configs.end(), refs[i].block->config) == configs.end()) {
        throw InvariantError("block " + std::to_string(i) + " decision '" +
                             refs[i].block->config.id() +
                             "' is not reachable from its candidate sets");
      }
    }
  }
  return arch;
}

std::string serialize_supernet(const SupernetSpec& spec) {
  ordered_json j;
  j["version"] = 1;
  j["kind"] = "supernet";
  j["input_resolution"] = spec.input_resolution;
  j["input_channels"] = spec.input_channels;
  j["stem"] = stem_to_json(spec.stem);
  j["stages"] = ordered_json::array();
  for (const auto& stage : spec.stages) {
    ordered_json js;
    js["width"] = stage.width;
    js["depth"] = stage.depth;
    js["stride"] = stage.stride;
    js["blocks"] = ordered_json::array();
    for (const auto& block : stage.blocks) {
      ordered_json jb;
      jb["kind"] = to_string(block.kind);
      jb["superkernels"] = ordered_json::array();
      for (const auto& sk : block.superkernels) {
        ordered_json jk;
        jk["kernels"] = sk.kernel_sizes;
        jk["expansions"] = sk.expansion_ratios;
        jb["superkernels"].push_back(std::move(jk));
      }
      js["blocks"].push_back(std::move(jb));
    }
    j["stages"].push_back(std::move(js));
  }
  j["head"] = head_to_json(spec.head);
  return j.dump(2) + "\n";
}

SupernetSpec deserialize_supernet(const std::string& text) {
  const ordered_json j = parse_json(text, "supernet file");
  require_keys(j, {"version", "kind", "input_resolution", "input_channels", "stem", "stages", "head"},
               "supernet file");
  if (j["version"].get<int>() != 1) {
    throw ConfigError("unknown supernet file version");
  }
  if (j["kind"].get<std::string>() != "supernet") {
    throw ConfigError("file is not a supernet file");
  }
  SupernetSpec spec;
  spec.input_resolution = j["input_resolution"].get<int>();
  spec.input_channels = j["input_channels"].get<int>();
  spec.stem = stem_from_json(j["stem"]);
  int prev_width = spec.stem.width;
  for (const auto& js : j["stages"]) {
    require_keys(js, {"width", "depth", "stride", "blocks"}, "supernet stage");
    StageSpec stage;
    stage.width = js["width"].get<int>();
    stage.depth = js["depth"].get<int>();
    stage.stride = js["stride"].get<int>();
    int b = 0;
    for (const auto& jb : js["blocks"]) {
      require_keys(jb, {"kind", "superkernels"}, "supernet block");
      BlockSpec block;
      block.kind = block_kind_from_string(jb["kind"].get<std::string>());
      block.input_width = b == 0 ? prev_width : stage.width;
      block.output_width = stage.width;
      block.stride = b == 0 ? stage.stride : 1;
      for (const auto& jk : jb["superkernels"]) {
        require_keys(jk, {"kernels", "expansions"}, "superkernel");
        SuperkernelSpec sk;
        sk.kernel_sizes = jk["kernels"].get<std::vector<int>>();
        sk.expansion_ratios = jk["expansions"].get<std::vector<double>>();
        block.superkernels.push_back(std::move(sk));
      }
      stage.blocks.push_back(std::move(block));
      ++b;
    }
    spec.stages.push_back(std::move(stage));
    prev_width = stage.width;
  }
  spec.head = head_from_json(j["head"]);
  spec.validate();
  return spec;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file '" + path + "'");
  out << content;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void save_architecture(const ConcreteArchitecture& arch, const std::string& path) {
  write_text_file(path, serialize_architecture(arch));
}

ConcreteArchitecture load_architecture(const std::string& path, const SupernetSpec* supernet) {
  return deserialize_architecture(read_text_file(path), supernet);
}

void save_supernet(const SupernetSpec& spec, const std::string& path) {
  write_text_file(path, serialize_supernet(spec));
}

SupernetSpec load_supernet(const std::string& path) {
  return deserialize_supernet(read_text_file(path));
}

ConcreteArchitecture architecture_from_decisions(const SupernetSpec& supernet,
                                                 const std::vector<CanonicalConfig>& per_block) {
  if (static_cast<int>(per_block.size()) != supernet.total_blocks()) {
    throw InvariantError("decision list length does not match supernet block count");
  }
  ConcreteArchitecture arch;
  arch.input_resolution = supernet.input_resolution;
  arch.input_channels = supernet.input_channels;
  arch.stem = supernet.stem;
  arch.head = supernet.head;
  int index = 0;
  for (const auto& stage : supernet.stages) {
    ConcreteStage cs;
    cs.width = stage.width;
    cs.stride = stage.stride;
    for (int b = 0; b < stage.depth; ++b) {
      ConcreteBlock cb;
      cb.config = per_block[index];
      cb.kind = stage.blocks[b].kind;
      cs.blocks.push_back(std::move(cb));
      ++index;
    }
    arch.stages.push_back(std::move(cs));
  }
  arch.validate();
  return arch;
}

}  // namespace s3nas
