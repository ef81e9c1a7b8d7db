"""Independent oracles: permission matrix, fuzzing shadow model, trace audit and golden scenarios."""
