# Tests Package