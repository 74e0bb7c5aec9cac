#include <flowmill/errors.hpp>
#include <flowmill/pathspec.hpp>

#include "doctest.h"

using namespace flowmill;

TEST_CASE("parse at every depth") {
  Pathspec flow = Pathspec::parse("sumsq");
  CHECK(flow.depth == Pathspec::Depth::Flow);
  CHECK(flow.flow == "sumsq");

  Pathspec run = Pathspec::parse("sumsq/3");
  CHECK(run.depth == Pathspec::Depth::Run);
  CHECK(run.run_id == 3);

  Pathspec step = Pathspec::parse("sumsq/3/train");
  CHECK(step.depth == Pathspec::Depth::Step);
  CHECK(step.step == "train");

  Pathspec task = Pathspec::parse("sumsq/3/train/7");
  CHECK(task.depth == Pathspec::Depth::Task);
  CHECK(task.task_id == 7);

  Pathspec artifact = Pathspec::parse("sumsq/3/train/7/model");
  CHECK(artifact.depth == Pathspec::Depth::Artifact);
  CHECK(artifact.artifact == "model");

  // system artifacts are addressable
  CHECK(Pathspec::parse("sumsq/3/end/9/_card").artifact == "_card");
  CHECK(Pathspec::parse("sumsq/3/end/9/_stdout").artifact == "_stdout");
}

TEST_CASE("round trip through to_string") {
  for (const char* text : {"f", "f/1", "f/12/s", "f/12/s/34", "f/12/s/34/a"}) {
    CHECK(Pathspec::parse(text).to_string() == text);
  }
}

TEST_CASE("malformed pathspecs are rejected") {
  for (const char* bad :
       {"", "Bad", "f/", "f/0", "f/-1", "f/01", "f/x", "f/1/2", "f/1/Step", "f/1/s/0",
        "f/1/s/1/", "f/1/s/1/Bad", "f/1/s/1/a/extra", "/f", "f//s",
        "f/99999999999999999999"}) {
    CHECK_THROWS_AS(Pathspec::parse(bad), Error);
    try {
      Pathspec::parse(bad);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::PathError);
    }
  }
}

TEST_CASE("builders") {
  CHECK(Pathspec::of_run("f", 2).to_string() == "f/2");
  CHECK(Pathspec::of_task("f", 2, "s", 9).to_string() == "f/2/s/9");
}
