#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "proxysynth/errors.hpp"
#include "proxysynth/image_io.hpp"
#include "proxysynth/toydata.hpp"

using namespace proxysynth;

TEST_CASE("png round trip for RGB and indexed images") {
  torch::manual_seed(1);
  auto image = torch::rand({3, 9, 7}) * 2 - 1;
  auto png = image_to_png(image);
  auto back = png_to_image(decode_png(encode_png(png)));
  CHECK(back.sizes() == torch::IntArrayRef{3, 9, 7});
  CHECK((back - image).abs().max().item<double>() <= 1.0 / 255 + 1e-6);

  auto labels = torch::randint(0, 4, {5, 6});
  auto idx = decode_png(encode_png(labels_to_png(labels, scene_class_palette())));
  CHECK(idx.indexed);
  CHECK(torch::equal(png_to_labels(idx, scene_class_palette()), labels));
}

TEST_CASE("labels decode from gray and rgb rasters and reject unknown values") {
  PngImage gray{2, 1, 1, false, {}, {0, 3}};
  CHECK(torch::equal(png_to_labels(gray, scene_class_palette()), torch::tensor({{0, 3}})));
  gray.pixels[1] = 9;
  CHECK_THROWS_AS(png_to_labels(gray, scene_class_palette()), LabelError);

  auto pal = scene_class_palette();
  PngImage rgb{1, 1, 3, false, {}, {pal[2][0], pal[2][1], pal[2][2]}};
  CHECK(png_to_labels(rgb, pal)[0][0].item<int64_t>() == 2);
  rgb.pixels = {1, 2, 3};
  CHECK_THROWS_AS(png_to_labels(rgb, pal), LabelError);
}

TEST_CASE("truncated png data raises IoError") {
  auto bytes = encode_png(image_to_png(torch::zeros({3, 8, 8})));
  std::vector<std::uint8_t> half(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  CHECK_THROWS_AS(decode_png(half), IoError);
  CHECK_THROWS_AS(decode_png(std::vector<std::uint8_t>{1, 2, 3}), IoError);
  CHECK_THROWS_AS(read_png(testing::temp_path("does_not_exist.png")), IoError);
}

TEST_CASE("base64 round trip and rejection of malformed text") {
  CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a'}) == "TWE=");
  std::vector<std::uint8_t> all(256);
  for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
  CHECK(base64_decode(base64_encode(all)) == all);
  CHECK(base64_decode("").empty());
  CHECK_THROWS_AS(base64_decode("TWF"), IoError);
  CHECK_THROWS_AS(base64_decode("T*Fu"), IoError);
}

TEST_CASE("proxy palette has distinct colors") {
  auto pal = proxy_palette();
  CHECK(pal.size() == 32);
  for (std::size_t i = 0; i < pal.size(); ++i)
    for (std::size_t j = i + 1; j < pal.size(); ++j) CHECK(pal[i] != pal[j]);
}
