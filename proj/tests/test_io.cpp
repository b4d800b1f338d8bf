#include "test_util.hpp"

#include <filesystem>

namespace fs = std::filesystem;
using namespace actlab;
using actlab::test::bits_equal;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "actlab_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

template <class Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

std::string idx_images_bytes(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                             const std::vector<unsigned char>& px) {
  std::string img;
  detail::append_be32(img, kIdxImagesMagic);
  detail::append_be32(img, n);
  detail::append_be32(img, h);
  detail::append_be32(img, w);
  for (unsigned char b : px) img.push_back(static_cast<char>(b));
  return img;
}

std::string idx_labels_bytes(std::uint32_t n, const std::vector<unsigned char>& ys) {
  std::string lab;
  detail::append_be32(lab, kIdxLabelsMagic);
  detail::append_be32(lab, n);
  for (unsigned char y : ys) lab.push_back(static_cast<char>(y));
  return lab;
}

}  // namespace

TEST_CASE("doubles survive shortest round-trip formatting bit for bit", "[io]") {
  rng::Stream s(80);
  std::vector<double> values = {0.0,   -0.0,     1.0,   0.1,    -0.1,  0.031,
                                0.007, 0.10607,  1e300, -1e300, 1e-300, 5e-324,
                                123456789.123456789, 2.5000000000000004};
  for (int i = 0; i < 200; ++i) values.push_back(s.uniform(-1e6, 1e6));
  for (double v : values) {
    double back = parse_double(format_double(v));
    CHECK(same_bits(back, v));
  }
  CHECK(format_double(-0.0) == "-0");
  CHECK(same_bits(parse_double("-0"), -0.0));

  CHECK_THROWS_AS(parse_double("abc"), IoError);
  CHECK_THROWS_AS(parse_double("1.5x"), IoError);
  CHECK_THROWS_AS(parse_double(""), IoError);
  CHECK(parse_u64("18446744073709551615") == 18446744073709551615ULL);
  CHECK_THROWS_AS(parse_u64("-1"), IoError);
  CHECK_THROWS_AS(parse_u64("12abc"), IoError);
  CHECK_THROWS_AS(parse_u64(""), IoError);
}

TEST_CASE("fnv1a64 matches published vectors and separates single-byte edits", "[io]") {
  CHECK(fnv1a64(std::string()) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ULL);

  rng::Stream s(81);
  std::string base(64, '\0');
  for (char& c : base) c = static_cast<char>(s.below(256));
  std::uint64_t h0 = fnv1a64(base);
  for (int rep = 0; rep < 100; ++rep) {
    std::string mutated = base;
    std::size_t pos = s.below(mutated.size());
    unsigned char delta = static_cast<unsigned char>(1 + s.below(255));
    mutated[pos] = static_cast<char>(static_cast<unsigned char>(mutated[pos]) ^ delta);
    CHECK(fnv1a64(mutated) != h0);
  }

  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
  CHECK(hex64(0x123456789abcdef0ULL) == "123456789abcdef0");
}

TEST_CASE("atomic writes land complete and leave no temp file", "[io]") {
  fs::path dir = fresh_dir("atomic");
  fs::path target = dir / "blob.bin";
  std::string payload = "line1\nline2\n";
  payload.push_back('\0');
  payload += "binary tail";
  write_file_atomic(target, payload);
  CHECK(read_file(target) == payload);
  CHECK_FALSE(fs::exists(dir / "blob.bin.tmp"));

  write_file_atomic(target, "replaced");
  CHECK(read_file(target) == "replaced");

  fs::path missing = dir / "not_there.bin";
  std::string msg = error_message([&] { read_file(missing); });
  CHECK(msg.find("not_there.bin") != std::string::npos);
}

TEST_CASE("little-endian scalar helpers round-trip and guard truncation", "[io]") {
  std::string buf;
  append_le<std::uint32_t>(buf, 0xaabbccddu);
  append_le<std::uint64_t>(buf, 0x1122334455667788ULL);
  append_le<double>(buf, -0.10607);
  std::size_t off = 0;
  CHECK(read_le<std::uint32_t>(buf, off, "u32") == 0xaabbccddu);
  CHECK(read_le<std::uint64_t>(buf, off, "u64") == 0x1122334455667788ULL);
  CHECK(same_bits(read_le<double>(buf, off, "f64"), -0.10607));
  CHECK(off == buf.size());
  CHECK_THROWS_AS(read_le<std::uint32_t>(buf, off, "past end"), IoError);
}

TEST_CASE("trim and split behave like the config grammar expects", "[io]") {
  CHECK(trim("  a b \t\r\n") == "a b");
  CHECK(trim("\r\n \t") == "");
  CHECK(split("a,b,,c", ',') == std::vector<std::string>({"a", "b", "", "c"}));
  CHECK(split("", ',') == std::vector<std::string>({""}));
  CHECK(split("x", ',') == std::vector<std::string>({"x"}));
}

TEST_CASE("synthetic blobs are seeded, clipped, and sit at their means when noiseless",
          "[io]") {
  Dataset a = synth_gaussians(30, {{0.3, 0.3}, {0.7, 0.7}}, 0.1, 5);
  Dataset b = synth_gaussians(30, {{0.3, 0.3}, {0.7, 0.7}}, 0.1, 5);
  REQUIRE(bits_equal(a.inputs, b.inputs));
  CHECK(a.labels == b.labels);
  Dataset c = synth_gaussians(30, {{0.3, 0.3}, {0.7, 0.7}}, 0.1, 6);
  CHECK_FALSE(bits_equal(a.inputs, c.inputs));

  CHECK(a.size() == 60);
  CHECK(a.num_classes == 2);
  for (std::size_t i = 0; i < 30; ++i) CHECK(a.labels[i] == 0);
  for (std::size_t i = 30; i < 60; ++i) CHECK(a.labels[i] == 1);
  for (double v : a.inputs.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.provenance.find("synth_gaussians") != std::string::npos);

  Dataset sharp = synth_gaussians(10, {{0.25, 0.5}, {0.75, 0.5}}, 0.0, 9);
  for (std::size_t i = 0; i < sharp.size(); ++i) {
    double mx = sharp.labels[i] == 0 ? 0.25 : 0.75;
    CHECK(sharp.inputs.at(i, 0) == mx);
    CHECK(sharp.inputs.at(i, 1) == 0.5);
  }
}

TEST_CASE("well-separated blobs fall on their own side of the midline", "[io]") {
  // Means (0.3,0.3) and (0.7,0.7) with sigma 0.1: the midline x+y=1 sits
  // 0.4/sqrt(2) from each mean, i.e. 2.83 sigma, so the Bayes error is about
  // 0.23%. With 4000 draws a 1% error bound has enormous slack.
  Dataset d = synth_gaussians(2000, {{0.3, 0.3}, {0.7, 0.7}}, 0.1, 17);
  std::size_t right_side = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double sum = d.inputs.at(i, 0) + d.inputs.at(i, 1);
    bool predicted0 = sum < 1.0;
    if (predicted0 == (d.labels[i] == 0)) ++right_side;
  }
  CHECK(static_cast<double>(right_side) / static_cast<double>(d.size()) >= 0.99);
}

TEST_CASE("synthetic blob arguments are validated", "[io]") {
  CHECK_THROWS_AS(synth_gaussians(0, {{0.3, 0.3}, {0.7, 0.7}}, 0.1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(synth_gaussians(5, {{0.3, 0.3}}, 0.1, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_gaussians(5, {{0.3, 0.3}, {0.3, 0.3}}, 0.1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(synth_gaussians(5, {{0.3, 0.3}, {0.7, 0.7}}, -0.1, 1),
                  std::invalid_argument);
}

TEST_CASE("dataset take selects rows with their labels", "[io]") {
  Dataset d = synth_gaussians(5, {{0.3, 0.3}, {0.7, 0.7}}, 0.05, 3);
  Dataset sub = d.take({0, 7, 3});
  REQUIRE(sub.size() == 3);
  CHECK(sub.labels == Labels({0, 1, 0}));
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t src = std::vector<std::size_t>({0, 7, 3})[k];
    CHECK(sub.inputs.at(k, 0) == d.inputs.at(src, 0));
    CHECK(sub.inputs.at(k, 1) == d.inputs.at(src, 1));
  }
  CHECK_THROWS_AS(d.take({999}), ShapeError);

  Dataset empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("reflect indexing mirrors without repeating the edge", "[io]") {
  CHECK(detail::reflect_index(-1, 8) == 1);
  CHECK(detail::reflect_index(-2, 8) == 2);
  CHECK(detail::reflect_index(0, 8) == 0);
  CHECK(detail::reflect_index(7, 8) == 7);
  CHECK(detail::reflect_index(8, 8) == 6);
  CHECK(detail::reflect_index(9, 8) == 5);
}

TEST_CASE("augmentation with no padding or flips is the identity", "[io]") {
  rng::Stream s(82);
  Tensor batch = actlab::test::random_tensor({3, 2, 4, 4}, s, 0.0, 1.0);
  CHECK(bits_equal(augment(batch, 0, false, 123), batch));
}

TEST_CASE("flip-only augmentation yields originals or exact mirrors", "[io]") {
  rng::Stream s(83);
  Tensor batch = actlab::test::random_tensor({6, 1, 3, 5}, s, 0.0, 1.0);
  Tensor out = augment(batch, 0, true, 7);
  REQUIRE(bits_equal(out, augment(batch, 0, true, 7)));  // deterministic
  std::size_t mirrored = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    bool is_id = true, is_mirror = true;
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        double got = out.data[(i * 3 + y) * 5 + x];
        if (!same_bits(got, batch.data[(i * 3 + y) * 5 + x])) is_id = false;
        if (!same_bits(got, batch.data[(i * 3 + y) * 5 + (4 - x)])) is_mirror = false;
      }
    CHECK((is_id || is_mirror));
    if (is_mirror && !is_id) ++mirrored;
  }
  CHECK(mirrored > 0);  // seed chosen so at least one example flips
}

TEST_CASE("padded crops match one reflect-pad candidate exactly", "[io]") {
  rng::Stream s(84);
  Tensor batch = actlab::test::random_tensor({4, 1, 3, 4}, s, 0.0, 1.0);
  std::size_t pad = 1;
  Tensor out = augment(batch, pad, false, 31);
  for (std::size_t i = 0; i < 4; ++i) {
    bool matched = false;
    for (std::size_t oy = 0; oy <= 2 * pad && !matched; ++oy)
      for (std::size_t ox = 0; ox <= 2 * pad && !matched; ++ox) {
        bool all = true;
        for (std::size_t y = 0; y < 3 && all; ++y)
          for (std::size_t x = 0; x < 4 && all; ++x) {
            std::size_t sy = detail::reflect_index(
                static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad), 3);
            std::size_t sx = detail::reflect_index(
                static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(pad), 4);
            all = same_bits(out.data[(i * 3 + y) * 4 + x],
                            batch.data[(i * 3 + sy) * 4 + sx]);
          }
        matched = all;
      }
    CHECK(matched);
  }
}

TEST_CASE("augmentation validates its inputs", "[io]") {
  Tensor flat({4, 6}, std::vector<double>(24, 0.5));
  CHECK_THROWS_AS(augment(flat, 1, false, 1), ShapeError);
  Tensor imgs = Tensor::full({2, 1, 3, 3}, 0.5);
  CHECK_THROWS_AS(augment(imgs, 3, false, 1), std::invalid_argument);
  CHECK_THROWS_AS(augment(imgs, 5, true, 1), std::invalid_argument);
}

TEST_CASE("idx files round-trip datasets bit for bit", "[io]") {
  fs::path dir = fresh_dir("idx");
  Dataset d;
  d.inputs = Tensor::zeros({3, 1, 2, 4});
  for (std::size_t i = 0; i < d.inputs.data.size(); ++i)
    d.inputs.data[i] = static_cast<double>((i * 11) % 256) / 255.0;
  d.labels = {4, 0, 9};
  d.num_classes = 10;

  std::string imgs = (dir / "imgs.idx").string();
  std::string labs = (dir / "labs.idx").string();
  save_idx(d, imgs, labs);
  Dataset back = load_idx(imgs, labs);
  REQUIRE(bits_equal(back.inputs, d.inputs));
  CHECK(back.labels == d.labels);
  CHECK(back.num_classes == 10);
  CHECK(back.provenance.rfind("idx:", 0) == 0);

  // Saving the loaded dataset reproduces the files byte for byte.
  std::string imgs2 = (dir / "imgs2.idx").string();
  std::string labs2 = (dir / "labs2.idx").string();
  save_idx(back, imgs2, labs2);
  CHECK(read_file(imgs2) == read_file(imgs));
  CHECK(read_file(labs2) == read_file(labs));

  // Out-of-range values are clipped onto the byte grid when saving.
  Dataset wild = d;
  wild.inputs.data[0] = 1.7;
  wild.inputs.data[1] = -0.3;
  save_idx(wild, imgs2, labs2);
  Dataset clipped = load_idx(imgs2, labs2);
  CHECK(clipped.inputs.data[0] == 1.0);
  CHECK(clipped.inputs.data[1] == 0.0);
}

TEST_CASE("idx loading diagnoses malformed files", "[io]") {
  fs::path dir = fresh_dir("idx_bad");
  auto put = [&](const std::string& name, const std::string& bytes) {
    std::string p = (dir / name).string();
    write_file_atomic(p, bytes);
    return p;
  };
  std::vector<unsigned char> px(2 * 2 * 2, 7);
  std::string good_img = put("good.img", idx_images_bytes(2, 2, 2, px));
  std::string good_lab = put("good.lab", idx_labels_bytes(2, {1, 0}));
  load_idx(good_img, good_lab);  // sanity: this pair is well-formed

  std::string bad_magic = put("bad_magic.img", idx_labels_bytes(2, {1, 0}));
  CHECK_THROWS_AS(load_idx(bad_magic, good_lab), IoError);

  std::string bad_lab_magic = put("bad_magic.lab", idx_images_bytes(2, 2, 2, px));
  CHECK_THROWS_AS(load_idx(good_img, bad_lab_magic), IoError);

  std::string empty_dim = put("empty.img", idx_images_bytes(2, 0, 2, {}));
  CHECK_THROWS_AS(load_idx(empty_dim, good_lab), IoError);

  std::vector<unsigned char> short_px(2 * 2 * 2 - 1, 7);
  std::string short_img = put("short.img", idx_images_bytes(2, 2, 2, short_px));
  std::string msg = error_message([&] { load_idx(short_img, good_lab); });
  CHECK(msg.find("payload") != std::string::npos);

  std::string miscount = put("miscount.lab", idx_labels_bytes(3, {1, 0, 1}));
  msg = error_message([&] { load_idx(good_img, miscount); });
  CHECK(msg.find("3 labels for 2 images") != std::string::npos);

  std::string short_lab = put("short.lab", idx_labels_bytes(2, {1}));
  CHECK_THROWS_AS(load_idx(good_img, short_lab), IoError);

  std::string truncated = put("trunc.img", idx_images_bytes(2, 2, 2, px).substr(0, 10));
  CHECK_THROWS_AS(load_idx(truncated, good_lab), IoError);

  Dataset flat;
  flat.inputs = Tensor::full({2, 3}, 0.5);
  flat.labels = {0, 1};
  CHECK_THROWS_AS(save_idx(flat, (dir / "x.img").string(), (dir / "x.lab").string()),
                  ShapeError);
  Dataset big_label;
  big_label.inputs = Tensor::full({1, 1, 2, 2}, 0.5);
  big_label.labels = {300};
  big_label.num_classes = 301;
  CHECK_THROWS_AS(save_idx(big_label, (dir / "y.img").string(), (dir / "y.lab").string()),
                  IoError);
}

TEST_CASE("checkpoints round-trip models bit for bit", "[io]") {
  fs::path dir = fresh_dir("ckpt");
  Checkpoint c;
  // Two inputs and two classes so the reloaded model can score quick_blobs.
  c.spec = ModelSpec::mlp({2, 5, 2});
  c.params = init(c.spec, 99);
  c.meta = {"act", "robust", "deadbeefdeadbeef", 42, 17};

  std::string bytes = checkpoint_bytes(c);
  Checkpoint back = parse_checkpoint(bytes, "memory");
  CHECK(back.spec.arch == Arch::kMlp);
  CHECK(back.spec.input_shape == c.spec.input_shape);
  CHECK(back.spec.num_classes == c.spec.num_classes);
  CHECK(back.spec.hidden == c.spec.hidden);
  CHECK(back.meta.method == "act");
  CHECK(back.meta.role == "robust");
  CHECK(back.meta.plan_digest == "deadbeefdeadbeef");
  CHECK(back.meta.seed == 42);
  CHECK(back.meta.epoch == 17);
  CHECK(back.params.rng_seed == c.params.rng_seed);
  REQUIRE(bits_equal(back.params, c.params));
  CHECK(checkpoint_bytes(back) == bytes);

  std::string path = (dir / "model.ckpt").string();
  save_checkpoint(c, path);
  Checkpoint loaded = load_checkpoint(path);
  REQUIRE(bits_equal(loaded.params, c.params));

  // A reloaded model computes identical predictions.
  Dataset d = actlab::test::quick_blobs(10);
  Tensor logits_a = forward(c.params, c.spec, d.inputs);
  Tensor logits_b = forward(loaded.params, loaded.spec, d.inputs);
  REQUIRE(bits_equal(logits_a, logits_b));
}

TEST_CASE("convnet specs survive the checkpoint json", "[io]") {
  Checkpoint c;
  c.spec = ModelSpec::small_convnet({1, 8, 8}, 3, {4, 8}, {3, 3}, {16});
  c.params = init(c.spec, 7);
  c.meta = {"madry", "robust", "00", 1, 2};
  Checkpoint back = parse_checkpoint(checkpoint_bytes(c), "memory");
  CHECK(back.spec.arch == Arch::kSmallConvnet);
  CHECK(back.spec.input_shape == Shape({1, 8, 8}));
  CHECK(back.spec.conv_channels == std::vector<std::size_t>({4, 8}));
  CHECK(back.spec.kernel_sizes == std::vector<std::size_t>({3, 3}));
  CHECK(back.spec.hidden == std::vector<std::size_t>({16}));
  REQUIRE(bits_equal(back.params, c.params));
}

TEST_CASE("any single corrupted byte is rejected", "[io]") {
  Checkpoint c;
  c.spec = ModelSpec::mlp({2, 3, 2});
  c.params = init(c.spec, 1);
  c.meta = {"standard", "robust", "ff", 0, 0};
  std::string bytes = checkpoint_bytes(c);

  rng::Stream s(85);
  std::vector<std::size_t> positions = {0, 5, 9, 20, bytes.size() / 2, bytes.size() - 9,
                                        bytes.size() - 1};
  for (int rep = 0; rep < 30; ++rep) positions.push_back(s.below(bytes.size()));
  for (std::size_t pos : positions) {
    std::string evil = bytes;
    evil[pos] = static_cast<char>(static_cast<unsigned char>(evil[pos]) ^ 0x01);
    CHECK_THROWS_AS(parse_checkpoint(evil, "evil"), IoError);
  }

  CHECK_THROWS_AS(parse_checkpoint("short", "tiny"), IoError);
}

TEST_CASE("future checkpoint versions and trailing bytes are refused", "[io]") {
  Checkpoint c;
  c.spec = ModelSpec::mlp({2, 3, 2});
  c.params = init(c.spec, 2);
  c.meta = {"trades", "robust", "aa", 3, 4};
  std::string bytes = checkpoint_bytes(c);

  // Bump the version and restamp the digest so only the version check fires.
  std::string body = bytes.substr(0, bytes.size() - 8);
  body[8] = 2;
  std::string versioned = body;
  append_le<std::uint64_t>(versioned, fnv1a64(body));
  std::string msg = error_message([&] { parse_checkpoint(versioned, "v2"); });
  CHECK(msg.find("version") != std::string::npos);

  std::string padded_body = bytes.substr(0, bytes.size() - 8) + "junk";
  std::string padded = padded_body;
  append_le<std::uint64_t>(padded, fnv1a64(padded_body));
  msg = error_message([&] { parse_checkpoint(padded, "padded"); });
  CHECK(msg.find("trailing") != std::string::npos);

  std::string not_magic = bytes;
  not_magic[0] = 'X';
  msg = error_message([&] { parse_checkpoint(not_magic, "wrong"); });
  CHECK(msg.find("magic") != std::string::npos);
}

TEST_CASE("metrics survive the csv round trip", "[io]") {
  std::vector<MetricsRecord> rows;
  for (std::size_t i = 0; i < 3; ++i) {
    MetricsRecord r;
    r.add("method", std::string("act"));
    r.add("epoch", i);
    r.add("loss", 0.1 * static_cast<double>(i + 1));
    r.add("sentinel", -1.0);
    rows.push_back(r);
  }
  std::string text = to_csv(rows);
  CHECK(text.substr(0, text.find('\n')) == "method,epoch,loss,sentinel");
  std::vector<MetricsRecord> back = from_csv(text);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].text("method") == "act");
    CHECK(back[i].number("epoch") == static_cast<double>(i));
    CHECK(same_bits(back[i].number("loss"), 0.1 * static_cast<double>(i + 1)));
    CHECK(back[i].number("sentinel") == -1.0);
  }
}

TEST_CASE("metrics survive the jsonl round trip including escapes", "[io]") {
  std::vector<MetricsRecord> rows;
  MetricsRecord r;
  r.add("name", std::string("quote\" back\\slash\nnewline\ttab"));
  r.add("value", -0.0);
  r.add("count", std::size_t{7});
  rows.push_back(r);
  MetricsRecord r2;
  r2.add("name", std::string("plain"));
  r2.add("value", 0.10607);
  r2.add("count", std::size_t{8});
  rows.push_back(r2);

  std::string text = to_jsonl(rows);
  CHECK(split(text, '\n').size() == 3);  // two records plus trailing newline
  std::vector<MetricsRecord> back = from_jsonl(text);
  REQUIRE(back.size() == 2);
  // Parsed key order may differ; compare by key.
  CHECK(back[0].text("name") == "quote\" back\\slash\nnewline\ttab");
  CHECK(same_bits(back[0].number("value"), -0.0));
  CHECK(back[0].number("count") == 7.0);
  CHECK(back[1].text("name") == "plain");
  CHECK(same_bits(back[1].number("value"), 0.10607));
}

TEST_CASE("metrics sinks reject malformed inputs", "[io]") {
  CHECK_THROWS_AS(to_csv({}), IoError);
  CHECK_THROWS_AS(from_csv(""), IoError);
  CHECK_THROWS_AS(from_jsonl("\n\n"), IoError);

  MetricsRecord a;
  a.add("x", 1.0);
  MetricsRecord b;
  b.add("y", 1.0);
  CHECK_THROWS_AS(to_csv({a, b}), IoError);

  MetricsRecord comma;
  comma.add("note", std::string("a,b"));
  CHECK_THROWS_AS(to_csv({comma}), IoError);

  CHECK_THROWS_AS(from_csv("a,b\n1\n"), IoError);
}

TEST_CASE("write_metrics places csv and jsonl files", "[io]") {
  fs::path dir = fresh_dir("metrics");
  MetricsRecord r;
  r.add("alpha", 0.9);
  r.add("seed", std::size_t{1});
  std::string csv_path = write_metrics(dir, "sweep", "csv", {r});
  std::string jsonl_path = write_metrics(dir, "sweep", "jsonl", {r});
  CHECK(fs::path(csv_path).filename() == "sweep.csv");
  CHECK(fs::path(jsonl_path).filename() == "sweep.jsonl");
  CHECK(from_csv(read_file(csv_path)).size() == 1);
  CHECK(from_jsonl(read_file(jsonl_path)).size() == 1);
  CHECK_THROWS_AS(write_metrics(dir, "sweep", "xml", {r}), IoError);
}

TEST_CASE("experiment configs parse the documented grammar", "[io]") {
  std::string text =
      "# toy experiment\n"
      "method = madry\n"
      "alpha = 0.5   # inline comment\n"
      "\n"
      "epochs = 12\n"
      "seeds = 1,2,3\n";
  ExperimentConfig cfg = ExperimentConfig::parse(text, "test.cfg");
  CHECK(cfg.has("method"));
  CHECK(cfg.get("method", "act") == "madry");
  CHECK(cfg.get_double("alpha", 0.9) == 0.5);
  CHECK(cfg.get_size("epochs", 0) == 12);
  CHECK(cfg.get_u64s("seeds", "0") == std::vector<std::uint64_t>({1, 2, 3}));
  CHECK(cfg.get("missing", "fallback") == "fallback");
  CHECK_THROWS_AS(cfg.require("missing"), ConfigError);
  CHECK(cfg.digest() == hex64(fnv1a64(text)));

  CHECK(ExperimentConfig::parse("").digest() == "cbf29ce484222325");
}

TEST_CASE("config errors carry origin and line numbers", "[io]") {
  std::string msg = error_message(
      [] { ExperimentConfig::parse("method = act\n\nbogus_key = 3\n", "exp.cfg"); });
  CHECK(msg.find("exp.cfg:3") != std::string::npos);
  CHECK(msg.find("bogus_key") != std::string::npos);

  msg = error_message(
      [] { ExperimentConfig::parse("method = act\nmethod = madry\n", "exp.cfg"); });
  CHECK(msg.find("exp.cfg:2") != std::string::npos);
  CHECK(msg.find("duplicate") != std::string::npos);

  msg = error_message([] { ExperimentConfig::parse("just words\n", "exp.cfg"); });
  CHECK(msg.find("exp.cfg:1") != std::string::npos);

  msg = error_message([] { ExperimentConfig::parse("alpha =   # nothing\n", "exp.cfg"); });
  CHECK(msg.find("empty value") != std::string::npos);

  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/actlab.cfg"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("alpha = x\n").get_double("alpha", 1.0),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("augment_flip = maybe\n").get_bool("augment_flip", false),
                  ConfigError);

  ExperimentConfig cfg;
  CHECK_THROWS_AS(cfg.set("nope", "1"), ConfigError);
  cfg.set("alpha", "0.25");
  CHECK(cfg.get_double("alpha", 0.0) == 0.25);
}

TEST_CASE("an empty config yields the documented defaults", "[io]") {
  ExperimentConfig cfg = ExperimentConfig::parse("");
  TrainPlan plan = plan_from_config(cfg);
  CHECK(plan.method == Method::kAct);
  CHECK(plan.alpha == 0.9);
  CHECK(plan.inv_lambda == 5.0);
  CHECK(plan.epochs == 100);
  CHECK(plan.batch_size == 128);
  CHECK(plan.lr0 == 0.1);
  CHECK(plan.momentum == 0.9);
  std::vector<std::pair<std::size_t, double>> milestones = {{60, 0.2}, {120, 0.2}, {150, 0.2}};
  CHECK(plan.lr_milestones == milestones);
  CHECK(plan.attack.budget.epsilon == 0.031);
  CHECK(plan.attack.step_size == 0.007);
  CHECK(plan.attack.steps == 10);
  CHECK(plan.attack.restarts == 1);
  CHECK(plan.attack.random_init);
  CHECK(plan.eval_attack.budget.epsilon == 0.031);
  CHECK(plan.eval_attack.step_size == 0.003);
  CHECK(plan.eval_attack.steps == 20);
  CHECK(plan.eval_attack.restarts == 5);
  CHECK(plan.eval_every == 0);
  CHECK(plan.seeds == std::vector<std::uint64_t>({0}));
  CHECK(plan.spec.num_classes == 2);
  CHECK(plan.spec.hidden == std::vector<std::size_t>({32, 32}));

  ProbeConfig probe = probe_from_config(cfg);
  CHECK(probe.widths == std::vector<std::size_t>({400, 200}));
  CHECK(probe.epochs == 80);
  CHECK(probe.batch_size == 64);
  CHECK(probe.lr == 0.05);
  CHECK(probe.label_seed == 1);
}

TEST_CASE("plan parsing honors custom schedules and clamps", "[io]") {
  ExperimentConfig cfg = ExperimentConfig::parse(
      "lr_milestones = 5:0.5, 9:0.1\n"
      "clamp_lo = 0.1\nclamp_hi = 0.9\n"
      "train_eps = 0.05\neval_restarts = 2\n"
      "method = trades\ninv_lambda = 3\n");
  TrainPlan plan = plan_from_config(cfg);
  CHECK(plan.method == Method::kTrades);
  CHECK(plan.inv_lambda == 3.0);
  std::vector<std::pair<std::size_t, double>> milestones = {{5, 0.5}, {9, 0.1}};
  CHECK(plan.lr_milestones == milestones);
  CHECK(plan.attack.budget.epsilon == 0.05);
  CHECK(plan.attack.budget.clamp_lo == 0.1);
  CHECK(plan.attack.budget.clamp_hi == 0.9);
  CHECK(plan.eval_attack.budget.clamp_lo == 0.1);
  CHECK(plan.eval_attack.restarts == 2);

  ExperimentConfig none = ExperimentConfig::parse("lr_milestones = none\n");
  CHECK(plan_from_config(none).lr_milestones.empty());

  CHECK_THROWS_AS(plan_from_config(ExperimentConfig::parse("lr_milestones = 5\n")),
                  ConfigError);
  CHECK_THROWS_AS(plan_from_config(ExperimentConfig::parse("momentum = 1.0\n")),
                  std::invalid_argument);
}

TEST_CASE("mean lists parse pairs separated by semicolons", "[io]") {
  std::vector<std::pair<double, double>> means = parse_means("0.35,0.35;0.65,0.65");
  REQUIRE(means.size() == 2);
  CHECK(means[0] == std::pair<double, double>(0.35, 0.35));
  CHECK(means[1] == std::pair<double, double>(0.65, 0.65));
  CHECK_THROWS_AS(parse_means("0.1;0.2"), ConfigError);
  CHECK_THROWS(parse_means("a,b"));
}

TEST_CASE("dataset building from config covers synth and idx", "[io]") {
  ExperimentConfig cfg = ExperimentConfig::parse("synth_n_per_class = 20\ndata_seed = 4\n");
  Dataset train_d = dataset_from_config(cfg, "train");
  CHECK(train_d.size() == 40);
  CHECK(train_d.split == "train");
  Dataset eval_d = dataset_from_config(cfg, "eval");
  CHECK(eval_d.size() == 200);  // defaults to 5x the training draw
  CHECK(eval_d.split == "eval");
  std::vector<std::size_t> head(40);
  for (std::size_t i = 0; i < 40; ++i) head[i] = i;
  CHECK_FALSE(bits_equal(eval_d.take(head).inputs, train_d.inputs));

  Dataset again = dataset_from_config(cfg, "train");
  REQUIRE(bits_equal(again.inputs, train_d.inputs));

  CHECK_THROWS_AS(dataset_from_config(cfg, "test"), ConfigError);
  CHECK_THROWS_AS(
      dataset_from_config(ExperimentConfig::parse("dataset = parquet\n"), "train"),
      ConfigError);

  fs::path dir = fresh_dir("cfg_idx");
  Dataset tiny;
  tiny.inputs = Tensor::full({2, 1, 2, 2}, 0.5);
  tiny.labels = {0, 1};
  std::string imgs = (dir / "t.img").string();
  std::string labs = (dir / "t.lab").string();
  save_idx(tiny, imgs, labs);
  ExperimentConfig icfg = ExperimentConfig::parse(
      "dataset = idx\nidx_images = " + imgs + "\nidx_labels = " + labs + "\n");
  Dataset from_idx = dataset_from_config(icfg, "train");
  CHECK(from_idx.size() == 2);
  Dataset idx_eval = dataset_from_config(icfg, "eval");  // falls back to train files
  REQUIRE(bits_equal(idx_eval.inputs, from_idx.inputs));

  ExperimentConfig missing = ExperimentConfig::parse("dataset = idx\n");
  CHECK_THROWS_AS(dataset_from_config(missing, "train"), ConfigError);
  ExperimentConfig gone = ExperimentConfig::parse(
      "dataset = idx\nidx_images = /no/img\nidx_labels = /no/lab\n");
  CHECK_THROWS_AS(dataset_from_config(gone, "train"), ConfigError);
}
