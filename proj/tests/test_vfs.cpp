// Mock filesystem tests: operation semantics, error taxonomy, fault
// injection, inspection, JSON trees, and log-replay equivalence under
// randomized operation sequences.

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <miniml/vfs.hpp>

using namespace miniml;

namespace {

Node tree(const nlohmann::json& j) { return tree_from_json(j); }

}  // namespace

TEST_CASE("read handles walk a file line by line") {
  VfsState fs = VfsState::reset(
      tree({{"files", {{"a.txt", "one\ntwo\nlast without newline"}}}}));
  int h = fs.open("/a.txt", OpenMode::Read);
  CHECK(fs.read_line(h) == "one");
  CHECK(fs.read_line(h) == "two");
  CHECK(fs.read_line(h) == "last without newline");
  try {
    fs.read_line(h);
    FAIL("expected end of file");
  } catch (const VfsError& e) {
    CHECK(e.kind == VfsErrorKind::EndOfFile);
  }
  fs.close(h);
}

TEST_CASE("two read handles on one file have independent positions") {
  VfsState fs = VfsState::reset(tree({{"files", {{"a", "1\n2\n"}}}}));
  int h1 = fs.open("/a", OpenMode::Read);
  int h2 = fs.open("/a", OpenMode::Read);
  CHECK(fs.read_line(h1) == "1");
  CHECK(fs.read_line(h2) == "1");
  CHECK(fs.read_line(h1) == "2");
  CHECK(fs.read_line(h2) == "2");
}

TEST_CASE("write handles create or truncate, and append at the position") {
  VfsState fs = VfsState::reset(tree({{"files", {{"old", "previous"}}}}));
  int h = fs.open("/new", OpenMode::Write);
  fs.write(h, "hello ");
  fs.write(h, "world");
  fs.close(h);
  REQUIRE(fs.find("/new"));
  CHECK(fs.find("/new")->file().content == "hello world");

  int t = fs.open("/old", OpenMode::Write);  // truncates on open
  fs.write(t, "x");
  fs.close(t);
  CHECK(fs.find("/old")->file().content == "x");
}

TEST_CASE("error taxonomy covers the misuse cases") {
  VfsState fs = VfsState::reset(
      tree({{"files", {{"f", "data"}}},
            {"dirs", {{"d", {{"files", {{"inner", ""}}}}}}}}));
  auto kind_of = [&](auto&& op) {
    try {
      op();
    } catch (const VfsError& e) {
      return e.kind;
    }
    FAIL("expected VfsError");
    return VfsErrorKind::BadPath;
  };
  CHECK(kind_of([&] { fs.open("/nope", OpenMode::Read); }) ==
        VfsErrorKind::NotFound);
  CHECK(kind_of([&] { fs.open("/d", OpenMode::Read); }) ==
        VfsErrorKind::IsDirectory);
  CHECK(kind_of([&] { fs.open("/d", OpenMode::Write); }) ==
        VfsErrorKind::IsDirectory);
  CHECK(kind_of([&] { fs.open("/missing/child", OpenMode::Write); }) ==
        VfsErrorKind::NotFound);
  CHECK(kind_of([&] { fs.open("relative", OpenMode::Read); }) ==
        VfsErrorKind::BadPath);
  CHECK(kind_of([&] { fs.open("/a/../b", OpenMode::Read); }) ==
        VfsErrorKind::BadPath);
  CHECK(kind_of([&] { fs.open("//f", OpenMode::Read); }) ==
        VfsErrorKind::BadPath);

  int w = fs.open("/f", OpenMode::Write);
  CHECK(kind_of([&] { fs.open("/f", OpenMode::Write); }) ==
        VfsErrorKind::AlreadyWriteOpen);
  CHECK(kind_of([&] { fs.read_line(w); }) == VfsErrorKind::WrongMode);
  int r = fs.open("/f", OpenMode::Read);
  CHECK(kind_of([&] { fs.write(r, "x"); }) == VfsErrorKind::WrongMode);
  fs.close(w);
  CHECK(kind_of([&] { fs.write(w, "x"); }) == VfsErrorKind::ClosedHandle);
  CHECK(kind_of([&] { fs.close(w); }) == VfsErrorKind::ClosedHandle);
  CHECK(kind_of([&] { fs.read_line(999); }) == VfsErrorKind::ClosedHandle);
}

TEST_CASE("faults fire on the countdown-th matching operation, once") {
  VfsState fs = VfsState::reset(tree({{"files", {{"f", "1\n2\n3\n4\n"}}}}));
  fs.add_fault(FaultRule{"/f", VfsOp::ReadOp, 3, "disk error", false});
  int h = fs.open("/f", OpenMode::Read);
  CHECK(fs.read_line(h) == "1");
  CHECK(fs.read_line(h) == "2");
  try {
    fs.read_line(h);
    FAIL("expected injected fault");
  } catch (const VfsError& e) {
    CHECK(e.kind == VfsErrorKind::InjectedFault);
    CHECK(e.message == "disk error");
  }
  // One-shot: subsequent reads succeed, position unchanged by the fault.
  CHECK(fs.read_line(h) == "3");
  CHECK(fs.read_line(h) == "4");
}

TEST_CASE("faults match on path and operation") {
  VfsState fs = VfsState::reset(tree({{"files", {{"a", "x\n"}, {"b", "y\n"}}}}));
  fs.add_fault(FaultRule{"/a", VfsOp::Open, 1, "boom", false});
  CHECK_NOTHROW(fs.open("/b", OpenMode::Read));        // other path
  int h = 0;
  CHECK_NOTHROW(h = fs.open("/b", OpenMode::Write));   // other path, write
  fs.close(h);
  CHECK_THROWS_AS(fs.open("/a", OpenMode::Read), VfsError);
  CHECK_NOTHROW(fs.open("/a", OpenMode::Read));        // fired already
}

TEST_CASE("inspect reports created, modified and open handles") {
  VfsState fs = VfsState::reset(tree(
      {{"files", {{"keep", "same"}, {"change", "before"}}},
       {"dirs", {{"sub", {{"files", {{"x", "1"}}}}}}}}));
  int w1 = fs.open("/fresh", OpenMode::Write);
  fs.write(w1, "new");
  fs.close(w1);
  int w2 = fs.open("/change", OpenMode::Write);
  fs.write(w2, "after");
  fs.close(w2);
  int left = fs.open("/keep", OpenMode::Read);

  InspectionReport r = fs.inspect();
  REQUIRE(r.created == std::vector<std::string>{"/fresh"});
  REQUIRE(r.modified == std::vector<std::string>{"/change"});
  CHECK(r.deleted.empty());
  REQUIRE(r.open_handles.size() == 1);
  CHECK(r.open_handles[0].second == "/keep");
  CHECK(r.open_handles[0].first == left);
  // The log records every successful operation in order.
  REQUIRE(r.op_log.size() == 7);
  CHECK(r.op_log[0].op == VfsOp::Open);
  CHECK(r.op_log[1].op == VfsOp::WriteOp);
  CHECK(r.op_log[1].data == "new");
  CHECK(r.op_log.back().path == "/keep");
}

TEST_CASE("truncating a file to identical content is not a modification") {
  VfsState fs = VfsState::reset(tree({{"files", {{"f", "abc"}}}}));
  int h = fs.open("/f", OpenMode::Write);
  fs.write(h, "abc");
  fs.close(h);
  CHECK(fs.inspect().modified.empty());
}

TEST_CASE("JSON trees round-trip") {
  nlohmann::json j = {
      {"files", {{"a", "alpha"}, {"b", ""}}},
      {"dirs",
       {{"sub",
         {{"files", {{"c", "gamma"}}},
          {"dirs", {{"deep", {{"files", nlohmann::json::object()},
                              {"dirs", nlohmann::json::object()}}}}}}}}}};
  Node n = tree_from_json(j);
  CHECK(tree_equal(n, tree_from_json(tree_to_json(n))));
  CHECK(n.dir().children.count("sub") == 1);
  CHECK(n.dir().children.at("sub").dir().children.at("c").file().content ==
        "gamma");
  // Inequality is detected at any depth.
  Node m = n;
  m.dir().children.at("sub").dir().children.at("c").file().content = "x";
  CHECK_FALSE(tree_equal(n, m));
}

TEST_CASE("replaying the operation log reproduces the final tree") {
  // Oracle: the real VfsState is driven through random operation sequences;
  // replay(snapshot, log) must land on the same tree even though it never
  // sees handles, positions or errors.
  std::mt19937_64 rng(99);
  const std::vector<std::string> paths = {"/a", "/b", "/sub/c", "/sub/d",
                                          "/nodir/x"};
  for (int iter = 0; iter < 200; iter++) {
    Node initial = tree(
        {{"files", {{"a", "seed\ndata\n"}}},
         {"dirs", {{"sub", {{"files", {{"c", "cc"}}}}}}}});
    VfsState fs = VfsState::reset(initial);
    if (iter % 3 == 0)
      fs.add_fault(FaultRule{paths[rng() % paths.size()],
                             static_cast<VfsOp>(rng() % 4),
                             static_cast<int>(1 + rng() % 3), "injected",
                             false});
    std::vector<int> handles;
    int ops = 5 + static_cast<int>(rng() % 25);
    for (int i = 0; i < ops; i++) {
      try {
        switch (rng() % 4) {
          case 0: {
            int h = fs.open(paths[rng() % paths.size()],
                            rng() % 2 ? OpenMode::Write : OpenMode::Read);
            handles.push_back(h);
            break;
          }
          case 1:
            if (!handles.empty()) fs.read_line(handles[rng() % handles.size()]);
            break;
          case 2:
            if (!handles.empty())
              fs.write(handles[rng() % handles.size()],
                       "w" + std::to_string(rng() % 10) + "\n");
            break;
          default:
            if (!handles.empty()) fs.close(handles[rng() % handles.size()]);
            break;
        }
      } catch (const VfsError&) {
        // Failed operations are not logged and must not affect replay.
      }
    }
    INFO("iteration " << iter << ", " << fs.log().size() << " logged ops");
    Node replayed = VfsState::replay(initial, fs.log());
    CHECK(tree_equal(fs.root(), replayed));
  }
}

TEST_CASE("replay of an empty log is the initial tree") {
  Node initial = tree({{"files", {{"a", "x"}}}});
  CHECK(tree_equal(VfsState::replay(initial, {}), initial));
}
