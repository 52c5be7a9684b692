# Package regular_dp
