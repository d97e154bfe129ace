#include "humap/data_matrix.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace humap;

TEST(ReadCsv, WithAndWithoutHeader) {
    std::istringstream with("a,b\n1,2\n3,4.5\n");
    std::istringstream without("1,2\r\n3,4.5\r\n\n");
    auto a = io::read_csv(with);
    auto b = io::read_csv(without);
    EXPECT_EQ(a.n_points(), 2u);
    EXPECT_EQ(a.n_dims(), 2u);
    EXPECT_EQ(a.values(), b.values());
    EXPECT_EQ(a(1, 1), 4.5);
}

TEST(ReadCsv, RejectsRaggedAndNonNumeric) {
    std::istringstream ragged("1,2\n3\n");
    EXPECT_THROW(io::read_csv(ragged), Error);
    std::istringstream text("1,2\nx,4\n");
    EXPECT_THROW(io::read_csv(text), Error);
    std::istringstream nan("1,nan\n");
    try {
        io::read_csv(nan);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::input);
    }
}

TEST(BinaryMatrix, RoundTripAndLayout) {
    DataMatrix m(2, 3, {1, 2, 3, 4, 5, 6.5});
    std::ostringstream out(std::ios::binary);
    io::write_binary(out, m.n_points(), m.n_dims(), m.values());
    auto bytes = out.str();
    ASSERT_EQ(bytes.size(), 8u + 16u + 6u * 4u);
    EXPECT_EQ(bytes.substr(0, 8), "HMAPMAT1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);
    // 1.0f little-endian is 00 00 80 3f.
    EXPECT_EQ(static_cast<unsigned char>(bytes[27]), 0x3f);
    std::istringstream in(bytes, std::ios::binary);
    auto back = io::read_binary(in);
    EXPECT_EQ(back.values(), m.values());
}

TEST(BinaryMatrix, BadMagic) {
    std::istringstream in(std::string("NOTMAGIC") + std::string(16, '\0'));
    EXPECT_THROW(io::read_binary(in), Error);
}

TEST(ReadMatrix, SniffsFormat) {
    humap::testing::TempDir dir("matrix");
    DataMatrix m(3, 2, {0, 1, 2, 3, 4, 5});
    io::write_binary(dir.path() / "m.bin", m);
    io::write_csv(dir.path() / "m.csv", m);
    EXPECT_EQ(io::read_matrix(dir.path() / "m.bin").values(), m.values());
    EXPECT_EQ(io::read_matrix(dir.path() / "m.csv").values(), m.values());
    try {
        io::read_matrix(dir.path() / "missing.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(DataMatrixShape, Validation) {
    EXPECT_THROW(DataMatrix(0, 2, {}), Error);
    EXPECT_THROW(DataMatrix(2, 2, {1, 2, 3}), Error);
    DataMatrix m(3, 1, {5, 6, 7});
    std::vector<std::size_t> rows{2, 0};
    EXPECT_EQ(m.subset(rows).values(), (std::vector<double>{7, 5}));
}
