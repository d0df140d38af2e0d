#include "mdnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "mdnet/image_io.hpp"

namespace mdnet::data {

Vocabulary::Vocabulary(std::vector<SemanticClass> classes) : classes_(std::move(classes)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (!index_.emplace(classes_[i].id, i).second) {
      throw DatasetError("vocabulary: duplicate id " + std::to_string(classes_[i].id));
    }
  }
}

const Vocabulary& Vocabulary::cityscapes() {
  static const Vocabulary v({
      {0, "unlabeled", "void"},       {1, "ego vehicle", "void"},
      {2, "rectification border", "void"}, {3, "out of roi", "void"},
      {4, "static", "void"},          {5, "dynamic", "void"},
      {6, "ground", "void"},          {7, "road", "flat"},
      {8, "sidewalk", "flat"},        {9, "parking", "flat"},
      {10, "rail track", "flat"},     {11, "building", "construction"},
      {12, "wall", "construction"},   {13, "fence", "construction"},
      {14, "guard rail", "construction"}, {15, "bridge", "construction"},
      {16, "tunnel", "construction"}, {17, "pole", "object"},
      {18, "pole group", "object"},   {19, "traffic light", "object"},
      {20, "traffic sign", "object"}, {21, "vegetation", "nature"},
      {22, "terrain", "nature"},      {23, "sky", "sky"},
      {24, "person", "human"},        {25, "rider", "human"},
      {26, "car", "vehicle"},         {27, "truck", "vehicle"},
      {28, "bus", "vehicle"},         {29, "caravan", "vehicle"},
      {30, "trailer", "vehicle"},     {31, "train", "vehicle"},
      {32, "motorcycle", "vehicle"},  {33, "bicycle", "vehicle"},
  });
  return v;
}

const SemanticClass* Vocabulary::find(std::int32_t id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &classes_[it->second];
}

LabelMapping LabelMapping::defaults() {
  LabelMapping m;
  for (const char* n : {"sky", "vegetation", "terrain"}) m.set(n, MotionAttribute::Unstable);
  for (const char* n : {"human", "vehicle", "static", "dynamic", "traffic light"}) {
    m.set(n, MotionAttribute::Moving);
  }
  for (const char* n : {"ground", "flat", "building", "wall", "fence", "guard rail", "bridge",
                        "tunnel", "pole", "pole group", "traffic sign"}) {
    m.set(n, MotionAttribute::Static);
  }
  return m;
}

void LabelMapping::set(const std::string& name, MotionAttribute attribute) {
  table_[name] = attribute;
}

std::optional<MotionAttribute> LabelMapping::find(const std::string& name) const {
  auto it = table_.find(name);
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

MotionAttribute LabelMapping::resolve(const SemanticClass& cls) const {
  if (auto a = find(cls.name)) return *a;
  if (auto a = find(cls.category)) return *a;
  return MotionAttribute::Ignore;
}

void LabelMapping::apply_overrides(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DatasetError(source + ":" + std::to_string(lineno) + ": expected name=attribute");
    }
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto attr = attribute_from_name(value);
    if (name.empty() || !attr) {
      throw DatasetError(source + ":" + std::to_string(lineno) + ": bad mapping '" + line + "'");
    }
    set(name, *attr);
  }
}

void LabelMapping::apply_overrides_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open label mapping " + path.string());
  apply_overrides(in, path.string());
}

AttributeMap semantic_to_motion(const SemanticMap& semantic, const Vocabulary& vocabulary,
                                const LabelMapping& mapping, std::size_t* unknown_pixels) {
  // Resolve each distinct id once.
  std::map<std::int32_t, MotionAttribute> cache;
  AttributeMap out(semantic.height, semantic.width, MotionAttribute::Ignore);
  std::size_t unknown = 0;
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    const auto id = semantic.data[i];
    auto it = cache.find(id);
    if (it == cache.end()) {
      const SemanticClass* cls = vocabulary.find(id);
      it = cache.emplace(id, cls ? mapping.resolve(*cls) : MotionAttribute::Ignore).first;
    }
    if (!vocabulary.find(id)) ++unknown;
    out.data[i] = it->second;
  }
  if (unknown_pixels) *unknown_pixels = unknown;
  return out;
}

MotionLabelGrid downsample_labels(const AttributeMap& attributes) {
  if (attributes.height % kCellSize != 0 || attributes.width % kCellSize != 0) {
    throw DatasetError("downsample_labels: dims " +
                       dims_string(attributes.height, attributes.width) +
                       " are not multiples of 8");
  }
  MotionLabelGrid grid(attributes.height / kCellSize, attributes.width / kCellSize,
                       MotionAttribute::Ignore);
  for (std::size_t gy = 0; gy < grid.height; ++gy) {
    for (std::size_t gx = 0; gx < grid.width; ++gx) {
      std::array<std::size_t, kNumMotionClasses> votes{};
      for (std::size_t y = 0; y < kCellSize; ++y) {
        for (std::size_t x = 0; x < kCellSize; ++x) {
          const auto a = attributes(gy * kCellSize + y, gx * kCellSize + x);
          if (is_learnable(a)) ++votes[class_index(a)];
        }
      }
      std::size_t best = 0;
      for (std::size_t k = 1; k < kNumMotionClasses; ++k) {
        if (votes[k] > votes[best]) best = k;
      }
      if (votes[best] > 0) grid(gy, gx) = kMotionClasses[best];
    }
  }
  return grid;
}

namespace {

std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  std::size_t k = i % period;
  return k < n ? k : period - k;
}

std::size_t round_up(std::size_t v, std::size_t multiple) {
  return (v + multiple - 1) / multiple * multiple;
}

}  // namespace

GrayImage reflect_pad(const GrayImage& image, std::size_t multiple) {
  const std::size_t h = round_up(image.height, multiple), w = round_up(image.width, multiple);
  GrayImage out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out(y, x) = image(reflect_index(y, image.height), reflect_index(x, image.width));
    }
  }
  return out;
}

Sample make_sample(const GrayImage& image, const SemanticMap& semantic,
                   const Vocabulary& vocabulary, const LabelMapping& mapping,
                   std::size_t* unknown_pixels) {
  if (!semantic.same_dims(image.height, image.width)) {
    throw DatasetError("label dims " + dims_string(semantic.height, semantic.width) +
                       " differ from image dims " + dims_string(image.height, image.width));
  }
  if (image.size() == 0) throw DatasetError("empty image");
  Sample s;
  s.original_height = image.height;
  s.original_width = image.width;
  s.image = reflect_pad(image, kCellSize);

  const AttributeMap attrs = semantic_to_motion(semantic, vocabulary, mapping, unknown_pixels);
  AttributeMap padded_attrs(s.image.height, s.image.width, MotionAttribute::Ignore);
  s.semantic = SemanticMap(s.image.height, s.image.width, kPaddingLabelId);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      padded_attrs(y, x) = attrs(y, x);
      s.semantic(y, x) = semantic(y, x);
    }
  }
  s.labels = downsample_labels(padded_attrs);
  return s;
}

std::array<std::uint64_t, kNumMotionClasses> class_histogram(std::span<const Sample> samples) {
  if (samples.empty()) throw DatasetError("class_histogram: empty dataset");
  std::array<std::uint64_t, kNumMotionClasses> counts{};
  for (const auto& s : samples) {
    for (auto a : s.labels.data) {
      if (is_learnable(a)) ++counts[class_index(a)];
    }
  }
  if (counts[0] + counts[1] + counts[2] == 0) {
    throw DatasetError("class_histogram: dataset has no labelled cells");
  }
  return counts;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest, const LoadOptions& options,
                                 LoadReport* report) {
  std::ifstream in(manifest);
  if (!in) throw DatasetError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  LoadReport local;
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    if (tab == std::string::npos) {
      throw DatasetError(where + ": expected image_path<TAB>label_path");
    }
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    const auto image_path = resolve(line.substr(0, tab));
    const auto label_path = resolve(line.substr(tab + 1));
    try {
      for (const auto& p : {image_path, label_path}) {
        if (!std::filesystem::exists(p)) throw DatasetError("missing file " + p.string());
      }
      GrayImage image;
      SemanticMap labels;
      try {
        image = io::read_gray_image(image_path);
      } catch (const io::ImageError& e) {
        throw DatasetError(std::string("unreadable image: ") + e.what());
      }
      try {
        labels = io::read_label_image(label_path);
      } catch (const io::ImageError& e) {
        throw DatasetError(std::string("unreadable label: ") + e.what());
      }
      if (!labels.same_dims(image.height, image.width)) {
        throw DatasetError("label " + label_path.string() + " is " +
                           dims_string(labels.height, labels.width) + " but image " +
                           image_path.string() + " is " + dims_string(image.height, image.width));
      }
      std::size_t unknown = 0;
      Sample s = make_sample(image, labels, options.vocabulary, options.mapping, &unknown);
      s.source = image_path.string();
      local.unknown_pixels += unknown;
      out.push_back(std::move(s));
    } catch (const DatasetError& e) {
      if (!options.skip_bad_samples) throw DatasetError(where + ": " + e.what());
      local.skipped.push_back(where + ": " + e.what());
    }
  }
  if (out.empty()) throw DatasetError("manifest " + manifest.string() + " yields no samples");
  if (report) *report = std::move(local);
  return out;
}

nn::Tensor image_batch(std::span<const GrayImage* const> images) {
  if (images.empty()) throw DatasetError("image_batch: no images");
  const std::size_t h = images.front()->height, w = images.front()->width;
  std::vector<double> values;
  values.reserve(images.size() * h * w);
  for (const GrayImage* img : images) {
    if (!img->same_dims(h, w)) {
      throw DatasetError("image_batch: mixed image sizes " + dims_string(h, w) + " and " +
                         dims_string(img->height, img->width));
    }
    values.insert(values.end(), img->data.begin(), img->data.end());
  }
  return nn::Tensor({images.size(), 1, h, w}, std::move(values));
}

nn::Tensor image_tensor(const GrayImage& image) {
  const GrayImage* p = &image;
  return image_batch(std::span<const GrayImage* const>(&p, 1));
}

}  // namespace mdnet::data
