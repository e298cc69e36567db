//! Stage orchestration (under construction).
