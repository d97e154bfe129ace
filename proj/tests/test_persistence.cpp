#include "humap/config.hpp"
#include "humap/persistence.hpp"
#include "humap/projection.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace humap;
using humap::testing::make_blobs;
using humap::testing::TempDir;

namespace {

Hierarchy small_hierarchy(std::uint64_t seed = 0) {
    auto data = make_blobs(300, 4, 3, 5);
    std::vector<std::size_t> sizes{300, 60, 20};
    HierarchyParams hp;
    hp.k = 8;
    hp.beta = 0.2;
    hp.seed = seed;
    return build_hierarchy(data, sizes, hp);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}

TEST(Persistence, HierarchyRoundTrip) {
    TempDir dir("persist-roundtrip");
    auto h = small_hierarchy();
    io::save_hierarchy(dir.path(), h);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "hierarchy.json"));
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(std::filesystem::exists(dir.path() / io::level_file_name(i)));
    }
    auto back = io::load_hierarchy(dir.path());
    EXPECT_EQ(back.params, h.params);
    ASSERT_EQ(back.n_levels(), h.n_levels());
    for (std::size_t i = 0; i < h.n_levels(); ++i) {
        EXPECT_EQ(back.levels[i], h.levels[i]) << "level " << i;
    }
}

TEST(Persistence, ManifestHasNoClockFields) {
    TempDir dir("persist-manifest");
    auto h = small_hierarchy(4);
    io::save_hierarchy(dir.path(), h);
    auto j = io::read_json(dir.path() / "hierarchy.json");
    EXPECT_EQ(j["level_sizes"], (std::vector<std::size_t>{300, 60, 20}));
    EXPECT_EQ(j["params"]["seed"], 4);
    EXPECT_EQ(j["params"]["beta"], 0.2);
    ASSERT_EQ(j["stage_seeds"].size(), 2u);
    EXPECT_EQ(j["stage_seeds"][0]["landmarks"].get<std::uint64_t>(), stage_seed(4, "landmarks", 1));
    for (const auto& [key, _] : j.items()) {
        EXPECT_EQ(key.find("time"), std::string::npos);
        EXPECT_EQ(key.find("date"), std::string::npos);
    }
}

TEST(Persistence, SameSeedGivesIdenticalBytes) {
    TempDir a("persist-bytes-a"), b("persist-bytes-b");
    io::save_hierarchy(a.path(), small_hierarchy(7));
    io::save_hierarchy(b.path(), small_hierarchy(7));
    for (auto name : {"hierarchy.json", "level_0.bin", "level_1.bin", "level_2.bin"}) {
        EXPECT_EQ(slurp(a.path() / name), slurp(b.path() / name)) << name;
    }
}

TEST(Persistence, BlobFraming) {
    std::ostringstream out;
    io::write_blob(out, io::level_magic, 3, 2, {{"ABC", std::vector<std::uint64_t>{5, 6}}, {"XY", std::vector<double>{1.5}}});
    auto bytes = out.str();
    ASSERT_EQ(bytes.size(), 8u + 24 + (8 + 1 + 8 + 16) + (8 + 1 + 8 + 8));
    EXPECT_EQ(bytes.substr(0, 8), "HMAPLVL1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);
    EXPECT_EQ(bytes.substr(32, 8), "ABC     ");
    EXPECT_EQ(bytes[40], 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[41]), 2);
    EXPECT_EQ(bytes[8 + 24 + 33 + 8], 1);

    std::istringstream in(bytes);
    auto blob = io::read_blob(in, io::level_magic);
    EXPECT_EQ(blob.level, 3u);
    EXPECT_EQ(blob.u64("ABC"), (std::vector<std::uint64_t>{5, 6}));
    EXPECT_EQ(blob.f64("XY"), (std::vector<double>{1.5}));
    EXPECT_THROW(blob.f64("ABC"), Error);
    EXPECT_THROW(blob.u64("NOPE"), Error);
}

TEST(Persistence, CorruptFilesAreIoErrors) {
    TempDir dir("persist-corrupt");
    io::save_hierarchy(dir.path(), small_hierarchy());
    auto bytes = slurp(dir.path() / "level_1.bin");
    io::write_text(dir.path() / "level_1.bin", bytes.substr(0, bytes.size() / 2));
    try {
        io::load_hierarchy(dir.path());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
    bytes[0] = 'X';
    io::write_text(dir.path() / "level_1.bin", bytes);
    EXPECT_THROW(io::load_hierarchy(dir.path()), Error);
    TempDir empty("persist-empty");
    EXPECT_THROW(io::load_hierarchy(empty.path()), Error);
}

TEST(EmbeddingExport, CsvRoundTripsExactly) {
    TempDir dir("persist-csv");
    Embedding emb;
    emb.level = 1;
    emb.point_ids = {4, 9, 12};
    emb.coords = {{0.1, -2.0 / 3.0}, {1e-300, 12345.678901234567}, {-0.0, 3.0}};
    emb.fixed_mask = {1, 0, 1};
    auto csv = io::embedding_csv(emb);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "point_id,x,y,fixed_flag,source_level");
    EXPECT_NE(csv.find("\n4,0.1,"), std::string::npos);
    EXPECT_NE(csv.find(",1,2\n"), std::string::npos);
    EXPECT_NE(csv.find(",0,1\n"), std::string::npos);
    io::write_embedding_csv(dir.path() / "e.csv", emb);
    auto back = io::read_embedding_csv(dir.path() / "e.csv", 1);
    EXPECT_EQ(back.point_ids, emb.point_ids);
    EXPECT_EQ(back.coords, emb.coords);
    EXPECT_EQ(back.fixed_mask, emb.fixed_mask);
}

TEST(EmbeddingExport, BinaryCoordinates) {
    TempDir dir("persist-bin");
    Embedding emb;
    emb.point_ids = {0, 1};
    emb.coords = {{1.5, -2}, {0.25, 8}};
    io::write_embedding_binary(dir.path() / "c.bin", emb);
    auto m = io::read_binary(dir.path() / "c.bin");
    ASSERT_EQ(m.n_points(), 2u);
    ASSERT_EQ(m.n_dims(), 2u);
    EXPECT_EQ(m(1, 0), 0.25);
    EXPECT_EQ(m(0, 1), -2.0);
}

TEST(EmbeddingCache, RoundTripAndKeyCheck) {
    TempDir dir("persist-cache");
    auto h = small_hierarchy();
    ProjectionParams p;
    p.layout.n_epochs = 30;
    HierarchyProjector proj(h, p);
    auto top = proj.project_level(2);
    auto key = projection_key(p);
    io::save_cached_embedding(dir.path(), top, key);
    auto back = io::load_cached_embedding(dir.path(), 2, key);
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(*back, top);
    EXPECT_FALSE(io::load_cached_embedding(dir.path(), 2, key + 1).has_value());
    EXPECT_FALSE(io::load_cached_embedding(dir.path(), 1, key).has_value());
    p.theta = 0.5;
    EXPECT_NE(projection_key(p), key);
}

TEST(RunConfig, ValidationMessages) {
    RunConfig c;
    c.input = "in.csv";
    c.output = "out";
    c.level_sizes = {100, 200};
    try {
        c.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
        EXPECT_STREQ(e.what(), "level sizes must be strictly decreasing");
    }
    c.level_sizes = {100, 20};
    EXPECT_NO_THROW(c.validate());
    c.k = 20;
    EXPECT_THROW(c.validate(), Error);
    c.k = 15;
    c.beta = 1.5;
    EXPECT_THROW(c.validate(), Error);
    c.beta = 0;
    c.threads = "many";
    EXPECT_THROW(c.validate(), Error);
    c.threads = "parallel";
    c.format = "xml";
    EXPECT_THROW(c.validate(), Error);
}

TEST(RunConfig, JsonRoundTripAndDefaults) {
    RunConfig c;
    c.input = "data.bin";
    c.level_sizes = {1000, 200, 40};
    c.beta = 0.3;
    c.seed = 99;
    c.output = "dir";
    EXPECT_EQ(RunConfig::from_json(c.to_json()), c);
    EXPECT_EQ(c.n_walks, 10u);
    EXPECT_EQ(c.walk_length, 10u);
    EXPECT_EQ(c.omega, 20u);
    EXPECT_EQ(c.upsilon, 30u);
    EXPECT_EQ(c.theta, 0.01);
    EXPECT_EQ(c.hierarchy_params().beta, 0.3);
    EXPECT_THROW(RunConfig::from_json(nlohmann::json{{"input", 3}}), Error);
}
