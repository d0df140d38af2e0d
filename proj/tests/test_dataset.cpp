#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdnet/dataset.hpp"
#include "mdnet/image_io.hpp"
#include "mdnet/toy_data.hpp"
#include "support/fixtures.hpp"

using namespace mdnet;
using namespace mdnet::data;
using MA = MotionAttribute;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mdnet_test_dataset" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

MA attribute_of(const std::string& name) {
  for (const auto& c : Vocabulary::cityscapes().classes()) {
    if (c.name == name) return LabelMapping::defaults().resolve(c);
  }
  FAIL("no class named " << name);
  return MA::Ignore;
}

AttributeMap cell_with(std::size_t first_count, MA first, MA rest) {
  AttributeMap m(8, 8, rest);
  for (std::size_t i = 0; i < first_count; ++i) m.data[i] = first;
  return m;
}

}  // namespace

TEST_SUITE("label mapping") {
  TEST_CASE("table rows") {
    CHECK(attribute_of("sky") == MA::Unstable);
    CHECK(attribute_of("vegetation") == MA::Unstable);
    CHECK(attribute_of("terrain") == MA::Unstable);
    CHECK(attribute_of("building") == MA::Static);
    CHECK(attribute_of("pole group") == MA::Static);
    CHECK(attribute_of("traffic sign") == MA::Static);
    CHECK(attribute_of("road") == MA::Static);  // via the "flat" category
    CHECK(attribute_of("traffic light") == MA::Moving);
    CHECK(attribute_of("static") == MA::Moving);
    CHECK(attribute_of("dynamic") == MA::Moving);
    CHECK(attribute_of("person") == MA::Moving);
    CHECK(attribute_of("car") == MA::Moving);
    CHECK(attribute_of("unlabeled") == MA::Ignore);
    CHECK(attribute_of("ego vehicle") == MA::Ignore);
  }

  TEST_CASE("the three rows partition their names") {
    const auto m = LabelMapping::defaults();
    std::size_t u = 0, mv = 0, s = 0;
    for (const auto& [name, a] : m.entries()) {
      u += a == MA::Unstable;
      mv += a == MA::Moving;
      s += a == MA::Static;
    }
    CHECK(u == 3);
    CHECK(mv == 5);
    CHECK(s == 11);
    CHECK(m.entries().size() == 19);
  }

  TEST_CASE("overrides and their errors") {
    auto m = LabelMapping::defaults();
    std::istringstream in("# comment\nsky = static\n\nrider=ignore  # no riders\n");
    m.apply_overrides(in, "mine.txt");
    CHECK(m.find("sky") == MA::Static);
    CHECK(m.find("rider") == MA::Ignore);
    std::istringstream bad("sky=static\nsky=sometimes\n");
    try {
      m.apply_overrides(bad, "mine.txt");
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("mine.txt:2") != std::string::npos);
    }
  }

  TEST_CASE("unknown ids become Ignore and are counted") {
    SemanticMap s(1, 4);
    s.data = {23, 99, 11, -5};
    std::size_t unknown = 0;
    auto a = semantic_to_motion(s, Vocabulary::cityscapes(), LabelMapping::defaults(), &unknown);
    CHECK(a.data == std::vector<MA>{MA::Unstable, MA::Ignore, MA::Static, MA::Ignore});
    CHECK(unknown == 2);
  }
}

TEST_SUITE("downsample labels") {
  TEST_CASE("documented cells") {
    CHECK(downsample_labels(AttributeMap(16, 24, MA::Static)) == MotionLabelGrid(2, 3, MA::Static));
    CHECK(downsample_labels(cell_with(40, MA::Static, MA::Moving))(0, 0) == MA::Static);
    CHECK(downsample_labels(cell_with(32, MA::Static, MA::Moving))(0, 0) == MA::Moving);
    CHECK(downsample_labels(cell_with(32, MA::Static, MA::Unstable))(0, 0) == MA::Unstable);
    CHECK(downsample_labels(cell_with(63, MA::Ignore, MA::Moving))(0, 0) == MA::Moving);
    CHECK(downsample_labels(AttributeMap(8, 8, MA::Ignore))(0, 0) == MA::Ignore);
    CHECK_THROWS_AS(downsample_labels(AttributeMap(12, 8, MA::Static)), DatasetError);
  }

  TEST_CASE("vote is invariant to pixel order within a cell") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      AttributeMap m(8, 8);
      for (auto& v : m.data) {
        const auto k = rng.below(4);
        v = k == 3 ? MA::Ignore : kMotionClasses[k];
      }
      const auto ref = downsample_labels(m)(0, 0);
      rng.shuffle(m.data);
      CHECK(downsample_labels(m)(0, 0) == ref);
    }
  }

  TEST_CASE("output dims are input dims over 8") {
    CHECK(downsample_labels(AttributeMap(40, 64, MA::Moving)).same_dims(5, 8));
  }
}

TEST_SUITE("samples") {
  TEST_CASE("padding reflects the image and ignores labels") {
    GrayImage img(10, 9);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<double>(i) / 100.0;
    SemanticMap sem(10, 9, 11);
    auto s = make_sample(img, sem, Vocabulary::cityscapes(), LabelMapping::defaults());
    CHECK(s.image.same_dims(16, 16));
    CHECK(s.labels.same_dims(2, 2));
    CHECK(s.original_height == 10);
    CHECK(s.original_width == 9);
    // numpy-style reflect about the last row/column: 10 -> 8, 11 -> 7, column 9 -> 7.
    CHECK(s.image(10, 0) == img(8, 0));
    CHECK(s.image(11, 0) == img(7, 0));
    CHECK(s.image(0, 9) == img(0, 7));
    CHECK(s.semantic(12, 12) == kPaddingLabelId);
    // Every coarse cell still contains real Static pixels.
    for (auto a : s.labels.data) CHECK(a == MA::Static);
    SemanticMap wrong(10, 8, 11);
    CHECK_THROWS_AS(make_sample(img, wrong, Vocabulary::cityscapes(), LabelMapping::defaults()),
                    DatasetError);
  }

  TEST_CASE("cells with any real pixel take its label") {
    GrayImage img(8, 9, 0.5);
    SemanticMap sem(8, 9, 23);
    auto s = make_sample(img, sem, Vocabulary::cityscapes(), LabelMapping::defaults());
    CHECK(s.labels(0, 0) == MA::Unstable);
    CHECK(s.labels(0, 1) == MA::Unstable);  // one real column beats 56 Ignore pixels
    auto t = make_sample(GrayImage(9, 8, 0.5), SemanticMap(9, 8, 23), Vocabulary::cityscapes(),
                         LabelMapping::defaults());
    CHECK(t.labels(1, 0) == MA::Unstable);
  }

  TEST_CASE("histogram examples") {
    GrayImage img(64, 64, 0.5);
    std::vector<Sample> one{make_sample(img, SemanticMap(64, 64, 11), Vocabulary::cityscapes(),
                                        LabelMapping::defaults())};
    CHECK(class_histogram(one) == std::array<std::uint64_t, 3>{0, 0, 64});
    CHECK_THROWS_AS(class_histogram(std::vector<Sample>{}), DatasetError);
    std::vector<Sample> none{make_sample(img, SemanticMap(64, 64, 0), Vocabulary::cityscapes(),
                                         LabelMapping::defaults())};
    CHECK_THROWS_AS(class_histogram(none), DatasetError);
  }

  TEST_CASE("histogram is order invariant and partitions the labelled cells") {
    auto samples = toy_samples(make_toy_dataset({.count = 5}));
    const auto h = class_histogram(samples);
    std::uint64_t labelled = 0;
    for (const auto& s : samples) {
      for (auto a : s.labels.data) labelled += is_learnable(a);
    }
    CHECK(h[0] + h[1] + h[2] == labelled);
    std::reverse(samples.begin(), samples.end());
    CHECK(class_histogram(samples) == h);
  }

  TEST_CASE("image batches stack into NCHW") {
    GrayImage a(8, 16, 0.25), b(8, 16, 0.75);
    std::vector<const GrayImage*> ptrs{&a, &b};
    auto t = image_batch(ptrs);
    CHECK(t.shape() == nn::Shape{2, 1, 8, 16});
    CHECK(t.values()[0] == 0.25);
    CHECK(t.values()[8 * 16] == 0.75);
    GrayImage c(16, 16);
    std::vector<const GrayImage*> mixed{&a, &c};
    CHECK_THROWS_AS(image_batch(mixed), DatasetError);
  }
}

TEST_SUITE("toy data") {
  TEST_CASE("every image contains all three attributes and is seeded") {
    auto a = make_toy_dataset(), b = make_toy_dataset();
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    for (const auto& s : toy_samples(a)) {
      std::array<bool, 3> seen{};
      for (auto v : s.labels.data) seen[class_index(v)] = true;
      CHECK(seen == std::array<bool, 3>{true, true, true});
    }
    ToyOptions other;
    other.seed = 8;
    CHECK_FALSE(make_toy_dataset(other).images == a.images);
  }
}

TEST_SUITE("manifest loading") {
  TEST_CASE("two valid pairs load; relative paths resolve against the manifest") {
    const auto dir = fresh_dir("valid");
    ToyOptions opt;
    opt.count = 2;
    const auto toy = make_toy_dataset(opt);
    const auto manifest = write_toy_dataset(toy, dir);
    auto samples = load_dataset(manifest);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].image == toy.images[0]);
    CHECK(samples[1].semantic == toy.labels[1]);
  }

  TEST_CASE("empty manifest and missing manifest are errors") {
    const auto dir = fresh_dir("empty");
    std::ofstream(dir / "m.txt") << "# nothing here\n\n";
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), DatasetError);
    try {
      load_dataset(dir / "absent.txt");
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("absent.txt") != std::string::npos);
    }
  }

  TEST_CASE("dimension mismatch names both files; skip mode continues") {
    const auto dir = fresh_dir("mismatch");
    io::write_pgm(dir / "a.pgm", GrayImage(16, 16, 0.5));
    io::write_label_pgm(dir / "a_label.pgm", SemanticMap(16, 16, 11));
    io::write_label_pgm(dir / "b_label.pgm", SemanticMap(8, 16, 11));
    std::ofstream(dir / "m.txt") << "a.pgm\ta_label.pgm\na.pgm\tb_label.pgm\nmissing.pgm\ta_label.pgm\n";
    try {
      load_dataset(dir / "m.txt");
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("m.txt:2") != std::string::npos);
      CHECK(msg.find("a.pgm") != std::string::npos);
      CHECK(msg.find("b_label.pgm") != std::string::npos);
    }
    LoadOptions opt;
    opt.skip_bad_samples = true;
    LoadReport report;
    auto samples = load_dataset(dir / "m.txt", opt, &report);
    CHECK(samples.size() == 1);
    REQUIRE(report.skipped.size() == 2);
    CHECK(report.skipped[1].find("missing.pgm") != std::string::npos);
  }

  TEST_CASE("malformed line") {
    const auto dir = fresh_dir("malformed");
    std::ofstream(dir / "m.txt") << "only_one_column.pgm\n";
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), DatasetError);
  }
}
