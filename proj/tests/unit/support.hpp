#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

namespace testing {

// Fresh per-test scratch directory, removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("msinfer_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testing

#define CHECK_THROWS_KIND(expr, k)                                   \
    do {                                                             \
        bool caught_ = false;                                        \
        try {                                                        \
            (void)(expr);                                            \
        } catch (const msinfer::Error& e_) {                         \
            caught_ = true;                                          \
            CHECK_MESSAGE(e_.kind() == (k), e_.what());              \
        }                                                            \
        CHECK_MESSAGE(caught_, "expected msinfer::Error from " #expr); \
    } while (0)
