#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdnet/grid.hpp"
#include "mdnet/motion.hpp"
#include "mdnet/tensor.hpp"

namespace mdnet::data {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SemanticClass {
  std::int32_t id;
  std::string name;
  std::string category;
};

/// Integer label id -> semantic class. The default is the Cityscapes labelIds
/// table (ids 0..33).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<SemanticClass> classes);
  static const Vocabulary& cityscapes();

  const SemanticClass* find(std::int32_t id) const;
  const std::vector<SemanticClass>& classes() const { return classes_; }

 private:
  std::vector<SemanticClass> classes_;
  std::map<std::int32_t, std::size_t> index_;
};

/// Semantic name -> motion attribute. A class resolves by its own name first,
/// then by its category name; anything unresolved is Ignore.
class LabelMapping {
 public:
  // sky, vegetation, terrain -> unstable; human, vehicle, static, dynamic,
  // traffic light -> moving; ground, flat, building, wall, fence, guard rail,
  // bridge, tunnel, pole, pole group, traffic sign -> static.
  static LabelMapping defaults();

  void set(const std::string& name, MotionAttribute attribute);
  std::optional<MotionAttribute> find(const std::string& name) const;
  MotionAttribute resolve(const SemanticClass& cls) const;

  // Lines of `semantic_name=unstable|moving|static|ignore`; '#' starts a comment.
  void apply_overrides(std::istream& in, const std::string& source = "overrides");
  void apply_overrides_file(const std::filesystem::path& path);

  const std::map<std::string, MotionAttribute>& entries() const { return table_; }

 private:
  std::map<std::string, MotionAttribute> table_;
};

using AttributeMap = Grid<MotionAttribute>;

inline constexpr std::int32_t kPaddingLabelId = -1;
inline constexpr std::size_t kCellSize = 8;

AttributeMap semantic_to_motion(const SemanticMap& semantic, const Vocabulary& vocabulary,
                                const LabelMapping& mapping, std::size_t* unknown_pixels = nullptr);

// Majority vote over each 8x8 cell among non-Ignore pixels; ties go to the
// lower of Unstable < Moving < Static; an all-Ignore cell stays Ignore.
MotionLabelGrid downsample_labels(const AttributeMap& attributes);

// Reflect-pads bottom and right up to the next multiple of `multiple`.
GrayImage reflect_pad(const GrayImage& image, std::size_t multiple);

struct Sample {
  GrayImage image;         // padded, dims divisible by 8
  SemanticMap semantic;    // padded with kPaddingLabelId
  MotionLabelGrid labels;  // H/8 x W/8
  std::size_t original_height = 0;
  std::size_t original_width = 0;
  std::string source;
};

// Pads, converts and downsamples one image/label pair. Padding pixels are Ignore.
Sample make_sample(const GrayImage& image, const SemanticMap& semantic,
                   const Vocabulary& vocabulary, const LabelMapping& mapping,
                   std::size_t* unknown_pixels = nullptr);

// Coarse-cell counts per learnable attribute over the whole dataset.
std::array<std::uint64_t, kNumMotionClasses> class_histogram(std::span<const Sample> samples);

struct LoadOptions {
  bool skip_bad_samples = false;  // otherwise the first bad pair is a hard error
  Vocabulary vocabulary = Vocabulary::cityscapes();
  LabelMapping mapping = LabelMapping::defaults();
};

struct LoadReport {
  std::vector<std::string> skipped;  // one message per skipped pair
  std::size_t unknown_pixels = 0;
};

// Manifest: one `image_path<TAB>label_path` pair per line, relative paths
// resolved against the manifest's directory. Blank lines and '#' lines skipped.
std::vector<Sample> load_dataset(const std::filesystem::path& manifest,
                                 const LoadOptions& options = {}, LoadReport* report = nullptr);

// Stacks images of identical size into an [N,1,H,W] tensor.
nn::Tensor image_batch(std::span<const GrayImage* const> images);
nn::Tensor image_tensor(const GrayImage& image);

}  // namespace mdnet::data
