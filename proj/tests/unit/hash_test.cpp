// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zoomrefine/error.hpp"
#include "zoomrefine/hash.hpp"

using namespace zoomrefine;

namespace {

std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Hash, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, Fnv1aKnownVectors) {
    static_assert(fnv1a64("") == 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Hash, Base64Rfc4648Vectors) {
    const std::pair<const char*, const char*> cases[] = {
        {"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},         {"foo", "Zm9v"},
        {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"},
    };
    for (const auto& [plain, enc] : cases) {
        EXPECT_EQ(base64_encode(bytes(plain)), enc);
        EXPECT_EQ(base64_decode(enc), bytes(plain)) << enc;
    }
}

TEST(Hash, Base64RoundTripRandom) {
    zoomrefine::mockworld::SplitMix64 rng(5);
    for (int n = 0; n < 200; ++n) {
        std::vector<std::uint8_t> data(n);
        for (auto& b : data) b = static_cast<std::uint8_t>(rng.next());
        EXPECT_EQ(base64_decode(base64_encode(data)), data);
    }
}

TEST(Hash, Base64RejectsGarbage) {
    EXPECT_THROW(base64_decode("Zm9v!"), InvalidArgument);
    EXPECT_THROW(base64_decode("Zm9"), InvalidArgument);
}
